use qpgap::cocycle::Cocycle;
use qpgap::fourier::ScalarMap;
use qpgap::pipeline::{labeled_spectrum, PipelineConfig};
use qpgap::spectrum::{band_structure, hausdorff, BandOptions};
use qpgap::Frequency;

fn bands(lambda: f64, p: u64, q: u64) -> Vec<(f64, f64)> {
    band_structure(lambda, &ScalarMap::amo(), p, q, &BandOptions::for_q(q)).unwrap().bands()
}

#[test]
fn aubry_duality_scales_the_spectrum() {
    // σ(λ) = λ·σ(1/λ) for the almost Mathieu family
    let strong = bands(2.0, 8, 13);
    let weak: Vec<(f64, f64)> = bands(0.5, 8, 13).iter().map(|b| (2.0 * b.0, 2.0 * b.1)).collect();
    assert_eq!(strong.len(), weak.len());
    assert!(hausdorff(&strong, &weak) < 1e-9, "{}", hausdorff(&strong, &weak));
}

#[test]
fn measure_approaches_four_minus_four_lambda() {
    for lambda in [0.25, 0.6] {
        let m: f64 = bands(lambda, 144, 233).iter().map(|b| b.1 - b.0).sum();
        assert!((m - (4.0 - 4.0 * lambda)).abs() < 1e-2, "λ={lambda}: {m}");
    }
}

#[test]
fn approximant_spectra_converge() {
    let a = bands(0.8, 55, 89);
    let b = bands(0.8, 89, 144);
    let c = bands(0.8, 144, 233);
    let (d1, d2) = (hausdorff(&a, &b), hausdorff(&b, &c));
    assert!(d2 < d1 && d2 < 1e-2, "{d1} {d2}");
}

#[test]
fn gap_labels_match_irrational_rotation_number() {
    let freq = Frequency::golden(40);
    let cfg = PipelineConfig::default();
    let (_, records) = labeled_spectrum(0.5, &ScalarMap::amo(), &freq, 55, 89, &cfg).unwrap();
    let alpha = freq.value();
    for r in records.iter().filter(|r| r.m.abs() <= 3 && r.width > 1e-3) {
        let mid = 0.5 * (r.e_minus + r.e_plus);
        let rho = Cocycle::amo(alpha, 0.5, mid).rotation_number(400_000, 0.0).unwrap();
        let d = qpgap::norm_dist(2.0 * rho.rho + r.m as f64 * alpha).min(qpgap::norm_dist(2.0 * rho.rho - r.m as f64 * alpha));
        assert!(d < 1e-3, "m={} defect {d}", r.m);
    }
}
