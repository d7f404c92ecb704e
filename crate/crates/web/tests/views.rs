use balora_web::{pissa_view, schedule_curve, spectral_view};

#[test]
fn pissa_view_reconstructs_and_orders_spectrum() {
    let v = pissa_view(24, 16, 4, 2.0, 3).unwrap();
    assert!(v.reconstruction_error < 1e-10);
    assert_eq!(v.spectrum.len(), 16);
    assert!((v.spectrum[0] - 1.0).abs() < 1e-10);
    assert!((v.spectrum[3] - 1.0 / 16.0).abs() < 1e-10);
    // the residual keeps the tail of the spectrum only
    assert!(v.residual_spectrum[0] < v.spectrum[3]);
    assert!(v.quant_error_full > 0.0);
}

#[test]
fn spectral_view_closed_forms() {
    let v = spectral_view(&[3.0, 2.0, 1.0], 0.3, 0.1).unwrap();
    assert_eq!(v.k, 1);
    assert!((v.svdr_nlu + 0.5).abs() < 1e-12);
    let v = spectral_view(&[3.0, 1.0], 1.0, 0.1).unwrap();
    assert!((v.svdr_nlg + 1.1).abs() < 1e-12);
}

#[test]
fn schedule_curve_endpoints() {
    let c = schedule_curve(0.1, 100, 0.1, "cosine").unwrap();
    assert_eq!(c.len(), 101);
    assert_eq!(c[0], 0.0);
    assert_eq!(c[10], 0.1);
    assert!(c[100].abs() < 1e-12);
    assert!(schedule_curve(0.1, 10, 0.0, "step").is_err());
}
