//! Subcommand bodies: each maps settings to a deterministic set of files.

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use qpgap::arithmetic::{estimate_beta, Frequency};
use qpgap::duality::{detect_resonance, find_bloch, BlochOptions};
use qpgap::fourier::ScalarMap;
use qpgap::pipeline::{
    analyze_gap, decay_campaign, find_gap, finest_convergent, homogeneity_campaign, Edge, PipelineConfig,
};
use qpgap::spectrum::{band_structure, label_gaps, BandStructure, LabelOptions, Precision};

use crate::cache::{digest, Cache, Lookup};
use crate::config::{FreqSpec, Settings};
use crate::output::{fmt_f, Meta, Outputs};
use crate::CliError;

/// Double-precision traces stop resolving gap widths around here.
const WIDTH_FLOOR: f64 = 1e-12;

pub struct Context<'a> {
    pub settings: &'a Settings,
    pub meta: Meta,
    pub cache: Option<&'a Cache>,
}

impl Context<'_> {
    fn potential(&self) -> ScalarMap {
        self.settings.potential.build()
    }

    fn pipeline(&self) -> PipelineConfig {
        let s = self.settings;
        let mut cfg = PipelineConfig {
            q_max: s.q_max,
            theta_factor: s.theta_factor,
            precision: s.precision,
            label: LabelOptions { rho_iterations: s.rho_iterations, ..LabelOptions::default() },
            bloch: BlochOptions { truncation: s.truncation, ..BlochOptions::default() },
            edge: s.edge,
            shift_iterations: s.rho_iterations,
            e_samples: s.e_samples,
            ..PipelineConfig::default()
        };
        if let FreqSpec::Liouville { beta, .. } = s.freq {
            cfg.beta = beta;
        }
        cfg
    }

    /// Band structure through the content-keyed band cache.
    fn bands(&self, lambda: f64, f: &ScalarMap, p: u64, q: u64) -> Result<BandStructure, CliError> {
        let opts = self.pipeline().band_options(q);
        let key = format!("bands-{}", digest(&BandStructure::cache_key(lambda, f, p, q, &opts)));
        if let Some(cache) = self.cache {
            match cache.load(&key) {
                Lookup::Hit(files) => {
                    if let Some(bs) = files.get("bands.json").and_then(|t| serde_json::from_str(t).ok()) {
                        return Ok(bs);
                    }
                    eprintln!("warning: cache entry {key} unreadable; recomputing");
                }
                Lookup::Corrupt(why) => eprintln!("warning: cache entry {key} corrupt ({why}); recomputing"),
                Lookup::Miss => {}
            }
        }
        let bs = band_structure(lambda, f, p, q, &opts).map_err(|e| CliError::stage("spectrum", e))?;
        if let Some(cache) = self.cache {
            let mut files = crate::cache::Files::new();
            files.insert("bands.json".into(), serde_json::to_string(&bs).expect("serializable"));
            if let Err(e) = cache.store(&key, &files) {
                eprintln!("warning: cache write failed: {e}");
            }
        }
        Ok(bs)
    }
}

fn frequency(s: &Settings) -> Result<Frequency, CliError> {
    s.frequency()
}

fn convergent(freq: &Frequency, q: u64) -> Result<(u64, u64), CliError> {
    finest_convergent(freq, q).map_err(|e| CliError::Config(e.to_string()))
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn spectrum(ctx: &Context) -> Result<Outputs, CliError> {
    let s = ctx.settings;
    let lambda = s.lambda()?;
    let f = ctx.potential();
    let meta = &ctx.meta;
    let mut out = Outputs::default();
    if let Some(qmax) = s.sweep {
        if qmax < 2 {
            return Err(CliError::Config("sweep needs q ≥ 2".into()));
        }
        let fracs: Vec<(u64, u64)> =
            (2..=qmax).flat_map(|q| (1..q).filter(move |&p| gcd(p, q) == 1).map(move |p| (p, q))).collect();
        let sweeps: Vec<Result<Vec<(f64, f64)>, CliError>> = fracs
            .par_iter()
            .map(|&(p, q)| {
                band_structure(lambda, &f, p, q, &ctx.pipeline().band_options(q))
                    .map(|bs| bs.bands())
                    .map_err(|e| CliError::stage("spectrum", e))
            })
            .collect();
        let sweeps = sweeps.into_iter().collect::<Result<Vec<_>, _>>()?;
        let mut rows = Vec::new();
        let mut plot = Vec::new();
        for (&(p, q), bands) in fracs.iter().zip(&sweeps) {
            for (i, b) in bands.iter().enumerate() {
                rows.push(format!("{p},{q},{i},{},{}", fmt_f(b.0), fmt_f(b.1)));
                plot.push(format!("{} {} {}", fmt_f(p as f64 / q as f64), fmt_f(b.0), fmt_f(b.1)));
            }
        }
        out.csv(meta, "spectrum.csv", "p,q,band,lo,hi", rows);
        out.plot(meta, "spectrum", "alpha lo hi", plot);
        let summary: Vec<_> = fracs
            .iter()
            .zip(&sweeps)
            .map(|(&(p, q), b)| json!({"p": p, "q": q, "bands": b.len(), "measure": b.iter().map(|x| x.1 - x.0).sum::<f64>()}))
            .collect();
        out.jsonl(meta, "spectrum.jsonl", summary);
        return Ok(out);
    }
    let freq = frequency(s)?;
    let (p, q) = convergent(&freq, s.q.unwrap_or(s.q_max))?;
    let bs = ctx.bands(lambda, &f, p, q)?;
    let bands = bs.bands();
    out.csv(
        meta,
        "spectrum.csv",
        "band,lo,hi",
        bands.iter().enumerate().map(|(i, b)| format!("{i},{},{}", fmt_f(b.0), fmt_f(b.1))),
    );
    let alpha_q = fmt_f(p as f64 / q as f64);
    out.plot(meta, "spectrum", "alpha lo hi", bands.iter().map(|b| format!("{alpha_q} {} {}", fmt_f(b.0), fmt_f(b.1))));
    let lines = std::iter::once(json!({
        "p": p, "q": q, "bands": bands.len(), "measure": bs.measure(), "unresolved": bs.unresolved,
    }))
    .chain(bands.iter().enumerate().map(|(i, b)| json!({"band": i, "lo": b.0, "hi": b.1})));
    out.jsonl(meta, "spectrum.jsonl", lines);
    Ok(out)
}

pub fn gaps(ctx: &Context) -> Result<Outputs, CliError> {
    let s = ctx.settings;
    let lambda = s.lambda()?;
    let f = ctx.potential();
    let freq = frequency(s)?;
    let (p, q) = convergent(&freq, s.q.unwrap_or(s.q_max))?;
    let bs = ctx.bands(lambda, &f, p, q)?;
    let records = label_gaps(&bs, &freq, &ctx.pipeline().label).map_err(|e| CliError::stage("labeling", e))?;
    let meta = &ctx.meta;
    let mut out = Outputs::default();
    out.csv(
        meta,
        "gaps.csv",
        "m,E_minus,E_plus,width,ids_num,ids_den,rho_resid",
        records.iter().map(|r| {
            format!("{},{},{},{},{},{},{}", r.m, fmt_f(r.e_minus), fmt_f(r.e_plus), fmt_f(r.width), r.ids_num, r.ids_den, fmt_f(r.rho_resid))
        }),
    );
    out.jsonl(meta, "gaps.jsonl", &records);
    let flagged = records.iter().filter(|r| r.flagged).count();
    out.json(
        meta,
        "gaps.json",
        &json!({
            "p": p,
            "q": q,
            "gaps": records.len(),
            "flagged": flagged,
            "flagged_fraction": if records.is_empty() { 0.0 } else { flagged as f64 / records.len() as f64 },
            "unresolved": bs.unresolved,
        }),
    );
    out.plot(meta, "gaps", "m width", records.iter().map(|r| format!("{} {}", r.m, fmt_f(r.width))));
    Ok(out)
}

pub fn decay(ctx: &Context) -> Result<Outputs, CliError> {
    let s = ctx.settings;
    let lambda = s.lambda()?;
    let freq = frequency(s)?;
    let camp = decay_campaign(lambda, &ctx.potential(), &freq, s.m_max, s.levels, &ctx.pipeline()).map_err(CliError::from_core("decay"))?;
    if s.precision == Precision::Double {
        let floored: Vec<String> =
            camp.rows.iter().filter(|r| r.stable && *r.widths.last().unwrap() < WIDTH_FLOOR).map(|r| r.m.to_string()).collect();
        if !floored.is_empty() {
            eprintln!("warning: widths for |m| = {} are below {WIDTH_FLOOR:e}; use precision = extended", floored.join(","));
        }
    }
    let meta = &ctx.meta;
    let mut out = Outputs::default();
    let mut header = String::from("m");
    for (_, q) in &camp.convergents {
        header.push_str(&format!(",width_q{q}"));
    }
    header.push_str(",stable");
    out.csv(
        meta,
        "decay.csv",
        &header,
        camp.rows.iter().map(|r| {
            let ws: Vec<String> = r.widths.iter().map(|w| fmt_f(*w)).collect();
            format!("{},{},{}", r.m, ws.join(","), r.stable)
        }),
    );
    out.json(meta, "decay.json", &camp);
    out.plot(
        meta,
        "decay",
        "abs_m ln_width",
        camp.rows
            .iter()
            .filter(|r| r.stable)
            .map(|r| format!("{} {}", r.m, fmt_f(r.widths.last().unwrap().ln()))),
    );
    Ok(out)
}

pub fn homogeneity(ctx: &Context) -> Result<Outputs, CliError> {
    let s = ctx.settings;
    let lambda = s.lambda()?;
    let freq = frequency(s)?;
    let cfg = PipelineConfig { q_max: s.q.unwrap_or(s.q_max), ..ctx.pipeline() };
    let camp = homogeneity_campaign(lambda, &ctx.potential(), &freq, &s.sigmas, &cfg)
        .map_err(CliError::from_core("homogeneity"))?;
    let meta = &ctx.meta;
    let mut out = Outputs::default();
    out.csv(
        meta,
        "homogeneity.csv",
        "sigma,min_ratio,argmin,gap_sum_at_min,gap_sum_max,windows",
        camp.rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{}",
                fmt_f(r.sigma),
                fmt_f(r.min_ratio),
                fmt_f(r.argmin),
                fmt_f(r.gap_sum_at_min),
                fmt_f(r.gap_sum_max),
                r.windows
            )
        }),
    );
    out.json(meta, "homogeneity.json", &camp);
    out.plot(meta, "homogeneity", "sigma min_ratio", camp.rows.iter().map(|r| format!("{} {}", fmt_f(r.sigma), fmt_f(r.min_ratio))));
    Ok(out)
}

#[derive(Serialize)]
struct ClaimEntry {
    pass: bool,
    slack: f64,
}

pub fn reduce(ctx: &Context) -> Result<Outputs, CliError> {
    let s = ctx.settings;
    let lambda = s.lambda()?;
    let freq = frequency(s)?;
    let d = analyze_gap(lambda, &ctx.potential(), &freq, s.m, &ctx.pipeline()).map_err(CliError::from_core("reduce"))?;
    let meta = &ctx.meta;
    let mut out = Outputs::default();
    out.json(meta, "dossier.json", &d);
    let claims: std::collections::BTreeMap<&str, ClaimEntry> =
        d.claims.iter().map(|c| (c.name.as_str(), ClaimEntry { pass: c.pass, slack: c.slack })).collect();
    out.json(meta, "claims.json", &claims);
    let mut lines = vec![json!({"kind": "reduction", "mu": d.form.mu, "sign": d.form.sign, "report": d.reduction})];
    if let Some(p) = &d.perturbation {
        lines.push(json!({"kind": "perturbation", "eps_m": p.eps_m, "averages": p.averages, "probe_residual": p.probe_residual}));
        match &p.averaging {
            Some(steps) => {
                for (i, r) in steps.iter().enumerate() {
                    lines.push(json!({"kind": "averaging", "step": i + 1, "report": r}));
                }
            }
            None => lines.push(json!({"kind": "averaging", "skipped": p.averaging_skipped})),
        }
        lines.push(json!({"kind": "rotation_shift", "report": p.shift}));
    }
    out.jsonl(meta, "reduce.jsonl", lines);
    Ok(out)
}

pub fn dual(ctx: &Context) -> Result<Outputs, CliError> {
    let s = ctx.settings;
    let lambda = s.lambda()?;
    let f = ctx.potential();
    let freq = frequency(s)?;
    let cfg = ctx.pipeline();
    let energy = match s.energy {
        Some(e) => e,
        None => {
            let (p, q) = convergent(&freq, s.q_max)?;
            let bs = ctx.bands(lambda, &f, p, q)?;
            let records = label_gaps(&bs, &freq, &cfg.label).map_err(|e| CliError::stage("labeling", e))?;
            let g = find_gap(&records, s.m).map_err(|e| CliError::stage("spectrum", e))?;
            match s.edge {
                Edge::Upper => g.e_plus,
                Edge::Lower => g.e_minus,
            }
        }
    };
    let alpha = freq.value();
    let sol = find_bloch(lambda, &f, alpha, energy, s.truncation, &cfg.bloch).map_err(|e| CliError::stage("duality", e))?;
    let res = detect_resonance(&sol, alpha, cfg.bloch.n_max, cfg.bloch.residual_tol);
    let meta = &ctx.meta;
    let mut out = Outputs::default();
    out.json(
        meta,
        "dual.json",
        &json!({
            "energy": sol.energy,
            "requested_energy": sol.requested_energy,
            "theta": sol.theta,
            "truncation": sol.truncation,
            "n_tilde": sol.n_tilde,
            "resonance": res.map(|r| json!({"n_tilde": r.n_tilde, "defect": r.defect})),
            "duality_residual": sol.duality_residual,
            "max_abs": sol.max_abs(),
            "tail_mass": sol.tail_mass(sol.truncation / 2),
            "decay": sol.decay,
            "reflected": sol.reflected,
            "coefficients": "dual_coeffs.txt",
        }),
    );
    out.text(meta, "dual_coeffs.txt", &sol.u_map().dump());
    let n = sol.truncation as i64;
    out.plot(
        meta,
        "dual",
        "k log10_abs_u",
        (-n..=n).filter(|&k| sol.coeff(k).norm() > 0.0).map(|k| format!("{k} {}", fmt_f(sol.coeff(k).norm().log10()))),
    );
    Ok(out)
}

pub fn beta(ctx: &Context) -> Result<Outputs, CliError> {
    let s = ctx.settings;
    let freq = frequency(s)?;
    let est = estimate_beta(&freq, s.kmax).map_err(|e| CliError::stage("beta", e))?;
    let meta = &ctx.meta;
    let mut out = Outputs::default();
    out.csv(meta, "beta.csv", "k,ratio", est.witnesses.iter().map(|(k, r)| format!("{k},{}", fmt_f(*r))));
    let synth = freq.synth_info().map(|i| json!({"target_beta": i.target_beta, "levels_built": i.levels_built}));
    out.json(
        meta,
        "beta.json",
        &json!({
            "alpha": freq.value(),
            "quotients": freq.quotients(),
            "truncated": freq.truncated(),
            "beta": est.beta,
            "window": est.window,
            "growing": est.growing,
            "witnesses": est.witnesses,
            "synth": synth,
            "record": freq.to_record(est.beta),
        }),
    );
    out.plot(meta, "beta", "k ratio", est.witnesses.iter().map(|(k, r)| format!("{k} {}", fmt_f(*r))));
    Ok(out)
}
