//! End-to-end runs: a labeled gap edge through duality, reduction and the
//! ε_m perturbation; the gap-decay and homogeneity campaigns.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arithmetic::Frequency;
use crate::cocycle::{Cocycle, Mat2};
use crate::duality::{assemble_u, detect_resonance, find_bloch, label_ratio, BlochOptions};
use crate::error::{Error, Result, StageExt};
use crate::fourier::ScalarMap;
use crate::reducibility::{
    average_identities, double_step, elliptic_normalize, frak_p1_closed, gap_edge_epsilon, perturbation_matrix,
    perturbation_residual, reduce_at_edge, rotation_shift_check, AverageIdentities, AveragingReport, ParabolicForm,
    ReductionOptions, ReductionReport, RotationShift, BAND_CAP,
};
use crate::spectrum::{
    band_structure, gap_decay_fit, label_gaps, local_ratio, measure_prefix, sample_points, widths_by_label, BandOptions,
    BandStructure, DecayFit, GapRecord, LabelOptions, Precision,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Edge {
    Upper,
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Largest approximant denominator.
    pub q_max: u64,
    /// θ samples per band computation, as a multiple of q.
    pub theta_factor: usize,
    pub precision: Precision,
    pub label: LabelOptions,
    pub bloch: BlochOptions,
    pub reduction: ReductionOptions,
    /// β(α) used for the strip width δ = max(5β, 0.05).
    pub beta: f64,
    pub edge: Edge,
    pub collapse_tol: f64,
    /// Probe ε for the first-order identity check.
    pub probe_eps: f64,
    pub shift_iterations: usize,
    /// Width stabilization across convergents: relative, absolute.
    pub stable_rel: f64,
    pub stable_abs: f64,
    /// Uniform samples per homogeneity scan, on top of the band endpoints.
    pub e_samples: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            q_max: 233,
            theta_factor: 4,
            precision: Precision::Double,
            label: LabelOptions::default(),
            bloch: BlochOptions { truncation: 128, ..BlochOptions::default() },
            reduction: ReductionOptions::default(),
            beta: 0.0,
            edge: Edge::Upper,
            collapse_tol: 1e-12,
            probe_eps: 1e-4,
            shift_iterations: 100_000,
            stable_rel: 0.1,
            stable_abs: 1e-13,
            e_samples: 2000,
        }
    }
}

impl PipelineConfig {
    pub fn delta(&self) -> f64 {
        (5.0 * self.beta).max(0.05)
    }

    pub fn band_options(&self, q: u64) -> BandOptions {
        BandOptions { theta_samples: (self.theta_factor * q as usize).max(8), precision: self.precision, refine: true }
    }
}

/// Finest convergent p/q with q ≤ q_max.
pub fn finest_convergent(freq: &Frequency, q_max: u64) -> Result<(u64, u64)> {
    freq.convergents_up_to(q_max)
        .last()
        .copied()
        .ok_or_else(|| Error::InsufficientDepth { needed: q_max, have: freq.max_denominator() })
}

pub fn labeled_spectrum(lambda: f64, f: &ScalarMap, freq: &Frequency, p: u64, q: u64, cfg: &PipelineConfig) -> Result<(BandStructure, Vec<GapRecord>)> {
    let bs = band_structure(lambda, f, p, q, &cfg.band_options(q))?;
    let records = label_gaps(&bs, freq, &cfg.label)?;
    Ok((bs, records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub name: String,
    pub pass: bool,
    /// Positive when the inequality holds with room.
    pub slack: f64,
}

impl Claim {
    fn le(name: &str, lhs: f64, rhs: f64) -> Claim {
        Claim { name: name.into(), pass: lhs <= rhs, slack: rhs - lhs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticForm {
    /// 𝔇 = 𝔓 + ε_m𝔓₁.
    pub d: Mat2,
    pub q: Mat2,
    pub sqrt_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub averages: AverageIdentities,
    pub probe_residual: f64,
    pub eps_m: f64,
    pub width_bound_ok: bool,
    pub frak_p1: Mat2,
    pub elliptic: Option<EllipticForm>,
    pub elliptic_error: Option<String>,
    pub averaging: Option<[AveragingReport; 2]>,
    pub remainder: Option<f64>,
    pub degree_preserved: Option<bool>,
    pub averaging_skipped: Option<String>,
    pub shift: RotationShift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapDossier {
    pub lambda: f64,
    pub alpha: f64,
    pub p: u64,
    pub q: u64,
    pub gap: GapRecord,
    pub edge: Edge,
    pub edge_energy: f64,
    /// Edge recomputed as a dual eigenvalue.
    pub bloch_energy: f64,
    pub theta: f64,
    pub n_tilde: i64,
    pub resonance_defect: f64,
    pub label_ratio: Option<f64>,
    pub duality_residual: f64,
    pub max_abs_u: f64,
    pub frame_residual: f64,
    pub decay_rate: Option<f64>,
    pub form: ParabolicForm,
    pub degree: i64,
    pub reduction: ReductionReport,
    pub collapsed: bool,
    pub sign_consistent: bool,
    pub perturbation: Option<Perturbation>,
    pub claims: Vec<Claim>,
}

/// Locates the gap labeled ±m at the finest convergent (exact label first).
pub fn find_gap(records: &[GapRecord], m: i64) -> Result<GapRecord> {
    records
        .iter()
        .find(|r| r.m == m)
        .or_else(|| records.iter().find(|r| r.m == -m))
        .cloned()
        .ok_or_else(|| Error::NotEnoughData(format!("no open gap labeled {m}")))
}

pub fn analyze_gap(lambda: f64, f: &ScalarMap, freq: &Frequency, m: i64, cfg: &PipelineConfig) -> Result<GapDossier> {
    let (p, q) = finest_convergent(freq, cfg.q_max).stage("spectrum")?;
    let (_, records) = labeled_spectrum(lambda, f, freq, p, q, cfg).stage("spectrum")?;
    let gap = find_gap(&records, m).stage("spectrum")?;
    analyze_record(lambda, f, freq, p, q, gap, cfg)
}

pub fn analyze_record(lambda: f64, f: &ScalarMap, freq: &Frequency, p: u64, q: u64, gap: GapRecord, cfg: &PipelineConfig) -> Result<GapDossier> {
    let alpha = freq.value();
    let edge_energy = match cfg.edge {
        Edge::Upper => gap.e_plus,
        Edge::Lower => gap.e_minus,
    };
    let sol = find_bloch(lambda, f, alpha, edge_energy, cfg.bloch.truncation, &cfg.bloch).stage("duality")?;
    let res = detect_resonance(&sol, alpha, cfg.bloch.n_max, cfg.bloch.residual_tol)
        .ok_or_else(|| Error::NoBloch("no resonant phase".into()))
        .stage("duality")?;
    let frame = assemble_u(&sol, lambda, f, alpha, cfg.bloch.residual_tol).stage("bloch-frame")?;
    let cocycle = Cocycle::schrodinger(alpha, lambda, f.clone(), sol.energy).stage("reduction")?;
    let red = reduce_at_edge(&cocycle, &frame, &cfg.reduction).stage("reduction")?;
    let form = red.form;
    let collapsed = form.is_collapsed(cfg.collapse_tol);
    let upper = cfg.edge == Edge::Upper;
    let sign_consistent = collapsed || (form.mu_prime() > 0.0) == upper;

    let mut claims = vec![
        Claim::le("duality_residual", sol.duality_residual, cfg.bloch.residual_tol),
        Claim::le("bloch_sup_le_one", sol.max_abs(), 1.0 + 1e-6),
        Claim::le("frame_residual", frame.residual.max(frame.residual_re).max(frame.residual_im), cfg.bloch.residual_tol),
        Claim::le("off_normal_residual", red.report.off_normal_residual, cfg.reduction.residual_tol),
        Claim::le("mu_cross_check", red.report.mu_rel_diff, 1e-6),
        Claim { name: "sign_convention".into(), pass: sign_consistent, slack: form.mu_prime() * if upper { 1.0 } else { -1.0 } },
    ];

    let perturbation = if collapsed {
        None
    } else {
        Some(perturb(&cocycle, &red, &gap, form, cfg, &mut claims)?)
    };

    Ok(GapDossier {
        lambda,
        alpha,
        p,
        q,
        edge: cfg.edge,
        edge_energy,
        bloch_energy: sol.energy,
        theta: sol.theta,
        n_tilde: res.n_tilde,
        resonance_defect: res.defect,
        label_ratio: label_ratio(gap.m, res.n_tilde),
        duality_residual: sol.duality_residual,
        max_abs_u: sol.max_abs(),
        frame_residual: frame.residual,
        decay_rate: sol.decay.map(|d| d.rate),
        form,
        degree: red.conjugacy.degree,
        reduction: red.report.clone(),
        collapsed,
        sign_consistent,
        perturbation,
        claims,
        gap,
    })
}

fn perturb(
    cocycle: &Cocycle,
    red: &crate::reducibility::Reduction,
    gap: &GapRecord,
    form: ParabolicForm,
    cfg: &PipelineConfig,
    claims: &mut Vec<Claim>,
) -> Result<Perturbation> {
    let r = &red.conjugacy.r;
    let alpha = cocycle.alpha();
    let averages = average_identities(r, form, alpha);
    claims.push(Claim::le("shift_identities", averages.shift_residual, 1e-9));
    claims.push(Claim::le("r11_sq_lower_bound", averages.r11_sq_lower, averages.r11_sq));
    claims.push(Claim { name: "averages_determinant_positive".into(), pass: averages.wronskian_positive, slack: averages.wronskian });

    let pt = perturbation_matrix(r, form, BAND_CAP).stage("perturbation")?;
    let probe_residual = perturbation_residual(cocycle, r, form, &pt, cfg.probe_eps, 1024).stage("perturbation")?;
    claims.push(Claim::le("first_order_identity", probe_residual, 1e-8));
    let eps_m = gap_edge_epsilon(&averages, form).stage("perturbation")?;
    let width_bound_ok = gap.width <= eps_m.abs();
    claims.push(Claim::le("width_le_eps_m", gap.width, eps_m.abs()));

    let frak_p1 = frak_p1_closed(&averages, form);
    let d = Mat2::new(0.0, form.mu_prime(), 0.0, 0.0) + frak_p1 * eps_m;
    let (elliptic, elliptic_error) = match elliptic_normalize(&d) {
        Ok((q, sqrt_delta)) => (Some(EllipticForm { d, q, sqrt_delta }), None),
        Err(e) => (None, Some(e.to_string())),
    };

    let (averaging, remainder, degree_preserved, averaging_skipped) =
        match double_step(form, &pt, eps_m, alpha, cfg.delta(), cfg.reduction.divisor_cutoff) {
            Ok(ds) => (
                Some([ds.first.report, ds.second.report]),
                Some(ds.remainder),
                Some(ds.degree_composite == 0),
                None,
            ),
            Err(e @ (Error::Inadmissible(_) | Error::SmallDivisor { .. })) => (None, None, None, Some(e.to_string())),
            Err(e) => return Err(e.at_stage("averaging")),
        };

    let shift = rotation_shift_check(cocycle, eps_m, cfg.shift_iterations).stage("rotation-shift")?;
    let monotone = if eps_m < 0.0 { shift.rho_shifted >= shift.rho_edge } else { shift.rho_shifted <= shift.rho_edge };
    claims.push(Claim {
        name: "rotation_shift".into(),
        pass: shift.differs && monotone,
        slack: (shift.rho_shifted - shift.rho_edge).abs() - shift.err_edge - shift.err_shifted,
    });
    Ok(Perturbation {
        averages,
        probe_residual,
        eps_m,
        width_bound_ok,
        frak_p1,
        elliptic,
        elliptic_error,
        averaging,
        remainder,
        degree_preserved,
        averaging_skipped,
        shift,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub m: u64,
    /// Width at each convergent used, coarse to fine.
    pub widths: Vec<f64>,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCampaign {
    pub lambda: f64,
    pub convergents: Vec<(u64, u64)>,
    pub rows: Vec<DecayRow>,
    pub fit: Option<DecayFit>,
    pub fit_error: Option<String>,
    /// Largest m such that every label 1..=m has an open, stable gap.
    pub resolved_up_to: u64,
    pub strictly_decreasing: bool,
    pub flagged_fraction: f64,
}

pub fn stable(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() < abs || (a > 0.0 && b > 0.0 && (a - b).abs() < rel * a.max(b))
}

/// Widths per |m| at the last `levels` convergents with q ≤ q_max, the
/// stability test between the two finest, and the exponential fit over the
/// stable labels.
pub fn decay_campaign(lambda: f64, f: &ScalarMap, freq: &Frequency, m_max: u64, levels: usize, cfg: &PipelineConfig) -> Result<DecayCampaign> {
    let all = freq.convergents_up_to(cfg.q_max);
    if all.is_empty() {
        return Err(Error::InsufficientDepth { needed: cfg.q_max, have: freq.max_denominator() }.at_stage("spectrum"));
    }
    let convergents: Vec<(u64, u64)> = all[all.len().saturating_sub(levels.max(1))..].to_vec();
    let runs: Vec<Result<Vec<GapRecord>>> =
        convergents.par_iter().map(|&(p, q)| labeled_spectrum(lambda, f, freq, p, q, cfg).map(|r| r.1)).collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>().stage("spectrum")?;
    let tables: Vec<Vec<(u64, f64)>> = runs.iter().map(|r| widths_by_label(r, m_max)).collect();
    let finest = runs.last().unwrap();
    let flagged_fraction = if finest.is_empty() {
        0.0
    } else {
        finest.iter().filter(|r| r.flagged).count() as f64 / finest.len() as f64
    };
    let rows: Vec<DecayRow> = (0..m_max as usize)
        .map(|i| {
            let widths: Vec<f64> = tables.iter().map(|t| t[i].1).collect();
            let n = widths.len();
            let last = widths[n - 1];
            let ok = last > 0.0 && (n < 2 || stable(widths[n - 2], last, cfg.stable_rel, cfg.stable_abs));
            DecayRow { m: i as u64 + 1, widths, stable: ok }
        })
        .collect();
    let resolved_up_to = rows.iter().take_while(|r| r.stable).count() as u64;
    let fit_points: Vec<(u64, f64)> = rows.iter().filter(|r| r.stable).map(|r| (r.m, *r.widths.last().unwrap())).collect();
    let (fit, fit_error) = match gap_decay_fit(&fit_points) {
        Ok(fit) => (Some(fit), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let finest_widths: Vec<f64> = rows.iter().map(|r| *r.widths.last().unwrap()).collect();
    let strictly_decreasing = finest_widths.windows(2).all(|w| w[1] < w[0]);
    Ok(DecayCampaign { lambda, convergents, rows, fit, fit_error, resolved_up_to, strictly_decreasing, flagged_fraction })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityRow {
    pub sigma: f64,
    pub min_ratio: f64,
    pub argmin: f64,
    /// Summed width of the gaps meeting (E−σ, E+σ), over σ: at the argmin
    /// window and the largest over all windows.
    pub gap_sum_at_min: f64,
    pub gap_sum_max: f64,
    pub windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityCampaign {
    pub lambda: f64,
    pub p: u64,
    pub q: u64,
    pub rows: Vec<HomogeneityRow>,
    /// min ratio non-decreasing as σ decreases, up to rounding.
    pub monotone: bool,
}

fn gap_sum(gaps: &[(f64, f64)], e: f64, sigma: f64) -> f64 {
    gaps.iter().filter(|g| g.1 > e - sigma && g.0 < e + sigma).map(|g| g.1 - g.0).sum::<f64>() / sigma
}

pub fn homogeneity_campaign(lambda: f64, f: &ScalarMap, freq: &Frequency, sigmas: &[f64], cfg: &PipelineConfig) -> Result<HomogeneityCampaign> {
    if sigmas.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidArgument("sigma must be positive".into()));
    }
    let (p, q) = finest_convergent(freq, cfg.q_max).stage("spectrum")?;
    let bs = band_structure(lambda, f, p, q, &cfg.band_options(q)).stage("spectrum")?;
    let bands = bs.bands();
    let gaps: Vec<(f64, f64)> = bands.windows(2).map(|w| (w[0].1, w[1].0)).collect();
    let prefix = measure_prefix(&bands);
    let points = sample_points(&bands, &prefix, cfg.e_samples);
    let rows: Vec<HomogeneityRow> = sigmas
        .par_iter()
        .map(|&sigma| {
            let mut best = (f64::INFINITY, 0.0);
            let mut gap_sum_max = 0.0f64;
            for &e in &points {
                let r = local_ratio(&bands, &prefix, e, sigma);
                if r < best.0 {
                    best = (r, e);
                }
                gap_sum_max = gap_sum_max.max(gap_sum(&gaps, e, sigma));
            }
            HomogeneityRow {
                sigma,
                min_ratio: best.0,
                argmin: best.1,
                gap_sum_at_min: gap_sum(&gaps, best.1, sigma),
                gap_sum_max,
                windows: points.len(),
            }
        })
        .collect();
    let mut by_sigma = rows.clone();
    by_sigma.sort_by(|a, b| b.sigma.total_cmp(&a.sigma));
    // ratios carry rounding of order ulp(total measure)/σ
    let total = *prefix.last().unwrap();
    let monotone = by_sigma
        .windows(2)
        .all(|w| w[1].min_ratio >= w[0].min_ratio - 16.0 * f64::EPSILON * total / w[1].sigma);
    Ok(HomogeneityCampaign { lambda, p, q, rows, monotone })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_operator_has_no_gaps() {
        let freq = Frequency::golden(40);
        let cfg = PipelineConfig { q_max: 89, ..PipelineConfig::default() };
        let (p, q) = finest_convergent(&freq, 89).unwrap();
        let (bs, records) = labeled_spectrum(0.0, &ScalarMap::amo(), &freq, p, q, &cfg).unwrap();
        assert!(records.is_empty());
        assert_eq!(bs.bands().len(), 1);
        match analyze_gap(0.0, &ScalarMap::amo(), &freq, 1, &cfg) {
            Err(Error::Stage { stage, .. }) => assert_eq!(stage, "spectrum"),
            other => panic!("expected a spectrum-stage error, got {other:?}"),
        }
        let h = homogeneity_campaign(0.0, &ScalarMap::amo(), &freq, &[1e-2, 1e-3], &cfg).unwrap();
        assert!(h.rows.iter().all(|r| (r.min_ratio - 1.0).abs() < 1e-6 && r.gap_sum_max == 0.0));
    }

    #[test]
    fn stability_rule() {
        assert!(stable(1.0, 1.05, 0.1, 1e-13));
        assert!(!stable(1.0, 1.2, 0.1, 1e-13));
        assert!(stable(0.0, 5e-14, 0.1, 1e-13));
        assert!(!stable(0.0, 1e-3, 0.1, 1e-13));
    }

    #[test]
    fn flagship_dossier() {
        let freq = Frequency::golden(40);
        let cfg = PipelineConfig::default();
        let d = analyze_gap(0.25, &ScalarMap::amo(), &freq, 1, &cfg).unwrap();
        assert_eq!(d.gap.m.abs(), 1);
        assert!(!d.collapsed);
        for c in &d.claims {
            assert!(c.pass, "{} failed with slack {}", c.name, c.slack);
        }
        let pert = d.perturbation.unwrap();
        assert!(pert.eps_m < 0.0 && pert.width_bound_ok);
        assert!(pert.elliptic.is_some(), "{:?}", pert.elliptic_error);
    }

    #[test]
    fn lower_edge_mirrors_signs() {
        let freq = Frequency::golden(40);
        let cfg = PipelineConfig { edge: Edge::Lower, ..PipelineConfig::default() };
        let d = analyze_gap(0.25, &ScalarMap::amo(), &freq, 1, &cfg).unwrap();
        assert!(d.sign_consistent);
        let pert = d.perturbation.unwrap();
        assert!(pert.eps_m > 0.0 && pert.width_bound_ok);
        assert!(pert.shift.differs && pert.shift.rho_shifted <= pert.shift.rho_edge);
    }
}
