//! One function per subcommand. Each returns the files it wants written plus a short
//! summary for stdout.

use std::path::Path;

use nvpair::config::ExperimentConfig;
use nvpair::decoherence::{NoiseCorrelation, NoisePreset};
use nvpair::hamiltonian::SpinSystem;
use nvpair::io::{image_to_csv, read_straggle_table, read_timestamps, CsvTable, MatrixJson};
use nvpair::nuclear::{bell_input, fit_contrast, round_trip_efficiency, swap_store};
use nvpair::observables::lifetime::preparation;
use nvpair::observables::{
    entanglement_lifetime, nv_nv_coherences, odmr_lines, odmr_spectrum, phase_scan, ChargeHandling, StateKind, Tomography,
};
use nvpair::photon::{
    contrast, correlation_fidelities, gated_level_exact, histogram_from_timestamps, infer_weights, pair_state, simulate_hbt,
    CoincidenceHistogram, HbtSettings, PairState,
};
use nvpair::pulse::gates::simulated_fidelity;
use nvpair::pulse::{
    apply_sequence, bell_point, deer_signal, fit_deer, fit_pulse_error, gate_envelopes, gate_fidelity, ground_state,
    mc_gate_fidelity, parse_sequence, phi0p_gate_text, phi0p_target, phi_dq_plus_target, phi_pm_conversion_text, CompileOptions,
    DeerMode, GateKind,
};
use nvpair::spatial::{
    absolute_distance, pair_distance_stats, rayleigh_fraction, sample_landings, synth_difference_images, yield_table,
    localize_repetitions, Pairing, StraggleModel,
};
use nvpair::spin::{DensityMatrix, DIMS_ELECTRON};
use nvpair::validation::{run_all, CriterionReport};
use nvpair::{NvError, Result};
use serde_json::json;

pub struct Artifact {
    pub name: String,
    pub contents: Vec<u8>,
}

pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    pub summary: serde_json::Value,
    /// Set when a validation criterion failed.
    pub failed: bool,
}

fn csv(name: &str, t: &CsvTable) -> Result<Artifact> {
    Ok(Artifact {
        name: name.to_string(),
        contents: t.to_csv_string()?.into_bytes(),
    })
}

fn json_file(name: &str, v: &serde_json::Value) -> Artifact {
    let mut text = serde_json::to_string_pretty(v).expect("json value serializes");
    text.push('\n');
    Artifact {
        name: name.to_string(),
        contents: text.into_bytes(),
    }
}

fn table(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<CsvTable> {
    let mut t = CsvTable::new(header);
    for r in rows {
        t.push(r)?;
    }
    Ok(t)
}

fn done(artifacts: Vec<Artifact>, summary: serde_json::Value) -> Result<Outcome> {
    Ok(Outcome {
        artifacts,
        summary,
        failed: false,
    })
}

pub fn odmr(cfg: &ExperimentConfig) -> Result<Outcome> {
    let sys = cfg.system.build()?;
    let spec = odmr_spectrum(&sys, &cfg.odmr)?;
    let lines = odmr_lines(&sys);
    let spectrum = table(&["frequency_hz", "signal"], spec.iter().map(|(f, s)| vec![*f, *s]))?;
    let line_table = table(
        &["defect", "ms", "frequency_hz", "strength"],
        lines
            .iter()
            .map(|l| vec![if l.defect == 'A' { 0.0 } else { 1.0 }, l.ms as f64, l.frequency_hz, l.strength]),
    )?;
    done(
        vec![csv("odmr_spectrum.csv", &spectrum)?, csv("odmr_lines.csv", &line_table)?],
        json!({ "lines": lines.len() }),
    )
}

pub fn deer(cfg: &ExperimentConfig) -> Result<Outcome> {
    let sys = cfg.system.build()?;
    let d = &cfg.deer;
    if d.n_points < 4 || !(d.tau_max_s > 0.0) {
        return Err(NvError::Config("deer needs tau_max_s > 0 and n_points >= 4".into()));
    }
    let t: Vec<f64> = (0..d.n_points).map(|i| i as f64 * d.tau_max_s / (d.n_points - 1) as f64).collect();
    let sq = deer_signal(&sys, &cfg.noise.a, &t, DeerMode::Sq, None)?;
    let dq = deer_signal(&sys, &cfg.noise.a, &t, DeerMode::Dq, None)?;
    let f_sq = fit_deer(&t, &sq)?;
    let f_dq = fit_deer(&t, &dq)?;
    let trace = table(&["tau_s", "sq_signal", "dq_signal"], (0..t.len()).map(|i| vec![t[i], sq[i], dq[i]]))?;
    let fit = json!({
        "sq_frequency_hz": f_sq.frequency,
        "dq_frequency_hz": f_dq.frequency,
        "dq_over_sq": f_dq.frequency / f_sq.frequency,
    });
    let fit_table = table(&["sq_frequency_hz", "dq_frequency_hz"], [vec![f_sq.frequency, f_dq.frequency]])?;
    done(
        vec![csv("deer.csv", &trace)?, csv("deer_fit.csv", &fit_table)?, json_file("deer.json", &fit)],
        fit,
    )
}

fn with_kind(p: &NoisePreset, kind: nvpair::decoherence::NoiseKind) -> Result<NoisePreset> {
    p.with_kind(kind, p.tau_c_s)
}

pub fn entangle(cfg: &ExperimentConfig) -> Result<Outcome> {
    let sys = cfg.system.build()?;
    let e = &cfg.entangle;
    if e.n_points < 2 || e.trajectories == 0 {
        return Err(NvError::Config("entangle needs n_points >= 2 and trajectories >= 1".into()));
    }
    let span = e.tau_max_s.unwrap_or(1.0 / sys.nu_dip_hz);
    let target = phi0p_target();
    let (na, nb) = (&cfg.noise.a, &cfg.noise.b);
    let mut rows = Vec::with_capacity(e.n_points);
    for i in 0..e.n_points {
        let tau = i as f64 * span / (e.n_points - 1) as f64;
        let (la, lb) = gate_envelopes(na, nb, tau);
        rows.push(vec![
            tau,
            simulated_fidelity(GateKind::Dq, tau, &sys, &target)?,
            gate_fidelity(tau, sys.nu_dip_hz, la, lb),
        ]);
    }
    let scan = table(&["tau_s", "fidelity_ideal", "fidelity_decohered"], rows)?;
    let (tau, f_ideal) = bell_point(GateKind::Dq, &sys, &target)?;
    let (ma, mb) = (with_kind(na, e.mc_noise)?, with_kind(nb, e.mc_noise)?);
    let f_mc = mc_gate_fidelity(&sys, &ma, &mb, tau, 0.0, e.trajectories, cfg.seed)?;
    let (la, lb) = gate_envelopes(na, nb, tau);
    let mut summary = json!({
        "gate": GateKind::Dq.text(tau),
        "bell_tau_s": tau,
        "fidelity_ideal": f_ideal,
        "fidelity_closed_form": gate_fidelity(tau, sys.nu_dip_hz, la, lb),
        "fidelity_monte_carlo": f_mc,
    });
    if let Some(goal) = e.calibrate_to {
        let sigma = fit_pulse_error(&sys, &ma, &mb, tau, goal, e.trajectories, cfg.seed)?;
        summary["pulse_jitter_sigma"] = json!(sigma);
        summary["fidelity_calibrated"] = json!(mc_gate_fidelity(&sys, &ma, &mb, tau, sigma, e.trajectories, cfg.seed)?);
    }
    done(vec![csv("entangle_scan.csv", &scan)?, json_file("entangle.json", &summary)], summary)
}

pub fn tomography(cfg: &ExperimentConfig) -> Result<Outcome> {
    let sys = cfg.system.build()?;
    let (tau, _) = bell_point(GateKind::Dq, &sys, &phi0p_target())?;
    let prep = parse_sequence(&(phi0p_gate_text(tau) + &phi_pm_conversion_text()))?;
    let ground = DensityMatrix::from_pure(&ground_state(), &DIMS_ELECTRON)?;
    let rho = apply_sequence(&ground, &prep, &sys, &CompileOptions::default())?;
    let tomo = Tomography::new(&sys, cfg.tomography)?;
    let data = tomo.measure(&rho)?;
    let res = tomo.reconstruct_with_fidelity(&data)?;
    let probes = table(
        &["row_index", "col_index", "amplitude"],
        nv_nv_coherences()
            .into_iter()
            .map(|c| Ok(vec![c.0.index() as f64, c.1.index() as f64, tomo.probe_amplitude(&data, c)?]))
            .collect::<Result<Vec<_>>>()?,
    )?;
    let rho_json = serde_json::to_value(MatrixJson::from_matrix(res.rho.matrix())).expect("matrix serializes");
    let summary = json!({
        "fidelity": res.fidelity,
        "residual": res.residual,
        "probes": tomo.probes.len(),
        "rank": tomo.rank(),
        "prepared_fidelity": rho.fidelity(&phi_dq_plus_target())?,
    });
    done(
        vec![
            json_file("tomography_rho.json", &rho_json),
            csv("tomography_probes.csv", &probes)?,
            json_file("tomography.json", &summary),
        ],
        summary,
    )
}

pub fn lifetime(cfg: &ExperimentConfig) -> Result<Outcome> {
    let sys = cfg.system.build()?;
    let (na, nb) = (&cfg.noise.a, &cfg.noise.b);
    let s = &cfg.lifetime;
    let mut rows = Vec::new();
    let mut summary = serde_json::Map::new();
    for (ci, corr) in [NoiseCorrelation::Independent, NoiseCorrelation::Shared].into_iter().enumerate() {
        for (ki, kind) in [StateKind::Phi, StateKind::Psi].into_iter().enumerate() {
            let r = entanglement_lifetime(kind, &sys, na, nb, corr, s)?;
            rows.push(vec![ci as f64, ki as f64, r.lifetime_s, r.peak.frequency_hz, r.peak.width_hz]);
            summary.insert(format!("{corr:?}_{kind:?}_lifetime_s").to_lowercase(), json!(r.lifetime_s));
        }
    }
    let lifetimes = table(&["shared_noise", "psi", "lifetime_s", "peak_hz", "width_hz"], rows)?;
    let scan_settings = |corr| nvpair::observables::ScanSettings { correlation: corr, ..s.scan };
    let mut columns = Vec::new();
    for kind in [StateKind::Phi, StateKind::Psi] {
        let (prep, _) = preparation(kind, &sys)?;
        let scan = phase_scan(
            &prep,
            &sys,
            na,
            nb,
            &cfg.measurement,
            &ChargeHandling::Ideal,
            &scan_settings(cfg.noise.correlation),
        )?;
        columns.push(scan);
    }
    let traces = table(
        &["t_s", "phi_signal", "psi_signal"],
        (0..columns[0].t.len()).map(|i| vec![columns[0].t[i], columns[0].signal[i], columns[1].signal[i]]),
    )?;
    let summary = serde_json::Value::Object(summary);
    done(vec![csv("lifetime.csv", &lifetimes)?, csv("lifetime_scan.csv", &traces)?], summary)
}

pub fn swap(cfg: &ExperimentConfig) -> Result<Outcome> {
    let sys = cfg.system.build()?;
    let w = &cfg.swap;
    let contrast = match w.contrast {
        Some(c) => c,
        None => fit_contrast(&sys, w.target_efficiency)?,
    };
    let store = swap_store(&bell_input(), &sys, contrast)?;
    let eta = round_trip_efficiency(&sys, contrast)?;
    let jump = w.decay.efficiency_jump(eta, &w.storage_times_s, sys.constants.a_n_hz, w.trajectories, cfg.seed)?;
    let model = w
        .storage_times_s
        .iter()
        .map(|t| w.decay.efficiency(eta, *t))
        .collect::<Result<Vec<f64>>>()?;
    let (eta0, t1) = w.decay.fit(&w.storage_times_s, &jump)?;
    let decay = table(
        &["storage_time_s", "efficiency_sampled", "efficiency_model"],
        (0..jump.len()).map(|i| vec![w.storage_times_s[i], jump[i], model[i]]),
    )?;
    let summary = json!({
        "contrast": contrast,
        "storage_efficiency": store.storage_efficiency,
        "round_trip_efficiency": eta,
        "fitted_eta0": eta0,
        "fitted_t1_s": t1,
    });
    done(vec![csv("swap_decay.csv", &decay)?, json_file("swap.json", &summary)], summary)
}

fn load_timestamps(paths: &[String; 2], base: &Path) -> Result<[Vec<f64>; 2]> {
    let read = |p: &String| read_timestamps(&base.join(p));
    Ok([read(&paths[0])?, read(&paths[1])?])
}

pub fn photon_corr(cfg: &ExperimentConfig, config_dir: &Path) -> Result<Outcome> {
    let sys = cfg.system.build()?;
    let p = &cfg.photon;
    let m = &p.emission;
    let hbt = |gate_ns: f64| HbtSettings { gate_ns, ..p.hbt };
    let mut artifacts = Vec::new();
    let mut summary = serde_json::Map::new();
    if let Some(files) = &p.timestamps {
        let [start, stop] = load_timestamps(files, config_dir)?;
        let mut rows = Vec::new();
        for g in &p.gates_ns {
            let h = histogram_from_timestamps(&start, &stop, p.hbt.bin_ns, p.hbt.max_delay_ns, *g)?;
            let (lvl, err) = h.level();
            let w = infer_weights(lvl, m.k0, m.k1)?;
            rows.push(vec![*g, lvl, err, w.alpha_sq, w.beta_sq]);
        }
        artifacts.push(csv("photon_levels.csv", &table(&["gate_ns", "level", "level_err", "alpha_sq", "beta_sq"], rows)?)?);
        let h = histogram_from_timestamps(&start, &stop, p.hbt.bin_ns, p.hbt.max_delay_ns, 0.0)?;
        artifacts.push(csv("photon_histogram.csv", &histogram_table(&[h])?)?);
        summary.insert("source".into(), json!("timestamps"));
    } else {
        let states = [PairState::Phi, PairState::Uncorrelated, PairState::Psi];
        let rhos = states.iter().map(|s| pair_state(*s, true)).collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        let mut ungated = Vec::new();
        for g in &p.gates_ns {
            let hs = rhos.iter().map(|r| simulate_hbt(r, m, &hbt(*g))).collect::<Result<Vec<_>>>()?;
            let lv: Vec<(f64, f64)> = hs.iter().map(CoincidenceHistogram::level).collect();
            let ex: Vec<f64> = rhos.iter().map(|r| gated_level_exact(r, m, *g)).collect();
            rows.push(vec![
                *g,
                lv[0].0,
                lv[0].1,
                lv[1].0,
                lv[1].1,
                lv[2].0,
                lv[2].1,
                contrast(lv[0].0, lv[2].0, lv[1].0),
                contrast(ex[0], ex[2], ex[1]),
            ]);
            if ungated.is_empty() {
                ungated = hs;
            }
        }
        artifacts.push(csv(
            "photon_levels.csv",
            &table(
                &["gate_ns", "phi", "phi_err", "uncorrelated", "uncorrelated_err", "psi", "psi_err", "contrast", "contrast_exact"],
                rows,
            )?,
        )?);
        artifacts.push(csv("photon_histogram.csv", &histogram_table(&ungated)?)?);
        let reps = 200;
        for (state, key) in [(PairState::Phi, "phi"), (PairState::Psi, "psi")] {
            let f = correlation_fidelities(&pair_state(state, true)?, state, &sys, p.correlation_noise, reps, cfg.seed)?;
            let mean = f.iter().sum::<f64>() / reps as f64;
            let sd = (f.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
            summary.insert(format!("{key}_diagonal_fidelity"), json!({ "mean": mean, "std": sd }));
        }
        summary.insert("source".into(), json!("simulation"));
    }
    let summary = serde_json::Value::Object(summary);
    artifacts.push(json_file("photon.json", &summary));
    done(artifacts, summary)
}

fn histogram_table(hs: &[CoincidenceHistogram]) -> Result<CsvTable> {
    let mut header = vec!["delay_ns".to_string()];
    header.extend((0..hs.len()).map(|i| format!("counts_{i}")));
    let mut t = CsvTable::new(&header);
    let delays = hs[0].delays_ns();
    for (i, d) in delays.iter().enumerate() {
        let mut row = vec![*d];
        row.extend(hs.iter().map(|h| h.counts[i] as f64));
        t.push(row)?;
    }
    Ok(t)
}

pub fn implant(cfg: &ExperimentConfig, config_dir: &Path) -> Result<Outcome> {
    let im = &cfg.implant;
    let straggle = StraggleModel {
        sigma_nm: im.sigma_nm,
        kind: im.kind,
    };
    let land = sample_landings(&im.aperture, &straggle, im.ions, cfg.seed)?;
    let st = pair_distance_stats(&land, im.d_strong_nm, Pairing::Independent, im.bin_nm, im.max_distance_nm)?;
    let hist = table(
        &["distance_nm", "pairs"],
        st.counts.iter().enumerate().map(|(i, n)| vec![(i as f64 + 0.5) * st.bin_nm, *n as f64]),
    )?;
    let mut artifacts = vec![csv("implant_distances.csv", &hist)?];
    let rows = match &im.table_csv {
        Some(p) => read_straggle_table(&config_dir.join(p))?,
        None => im.table.clone(),
    };
    if !rows.is_empty() {
        let y = yield_table(&rows, &im.aperture, im.kind, im.d_strong_nm, im.ions, cfg.seed)?;
        let t = table(
            &["energy_kev", "sigma_nm", "depth_nm", "pair_yield"],
            rows.iter().zip(&y).map(|(r, y)| vec![r.energy_kev, r.sigma_nm, r.depth_nm, *y]),
        )?;
        artifacts.push(csv("implant_yield.csv", &t)?);
    }
    let summary = json!({
        "pair_fraction": st.fraction,
        "std_err": st.std_err,
        "pairs": st.n_pairs,
        "point_source_rayleigh_fraction": rayleigh_fraction(straggle.sigma_axis(), im.d_strong_nm),
    });
    artifacts.push(json_file("implant.json", &summary));
    done(artifacts, summary)
}

pub fn localize(cfg: &ExperimentConfig) -> Result<Outcome> {
    let sys = cfg.system.build()?;
    let l = &cfg.localize;
    let run = localize_repetitions(l.separation_nm, &l.imaging, l.repetitions, cfg.seed)?;
    let reps = table(
        &["repetition", "dx_nm", "dy_nm", "distance_nm"],
        run.displacements.iter().enumerate().map(|(i, d)| vec![i as f64, d[0], d[1], d[0].hypot(d[1])]),
    )?;
    let half = [0.5 * l.separation_nm[0], 0.5 * l.separation_nm[1]];
    let (a, b) = synth_difference_images([[-half[0], -half[1]], half], &l.imaging, cfg.seed)?;
    let range = absolute_distance(
        run.mean_distance_nm,
        sys.nu_dip_hz,
        &sys.orientation_a,
        &sys.orientation_b,
        l.surface_normal,
        &sys.constants,
    );
    let mut summary = json!({
        "mean_distance_nm": run.mean_distance_nm,
        "std_distance_nm": run.std_distance_nm,
    });
    summary["distance_range"] = match range {
        Ok(r) => serde_json::to_value(r).expect("range serializes"),
        Err(e) => json!({ "error": e.to_string() }),
    };
    done(
        vec![
            csv("localize.csv", &reps)?,
            Artifact {
                name: "localize_difference_a.csv".into(),
                contents: image_to_csv(&a).into_bytes(),
            },
            Artifact {
                name: "localize_difference_b.csv".into(),
                contents: image_to_csv(&b).into_bytes(),
            },
            json_file("localize.json", &summary),
        ],
        summary,
    )
}

pub fn validate() -> Result<Outcome> {
    let reports: Vec<CriterionReport> = run_all();
    for r in &reports {
        println!("{}", r.line());
    }
    let failed = reports.iter().any(|r| !r.passed);
    let rows = table(
        &["criterion", "passed"],
        reports.iter().map(|r| vec![r.id as f64, if r.passed { 1.0 } else { 0.0 }]),
    )?;
    let detail = serde_json::to_value(&reports).expect("reports serialize");
    let summary = json!({
        "passed": reports.iter().filter(|r| r.passed).count(),
        "failed": reports.iter().filter(|r| !r.passed).map(|r| r.id).collect::<Vec<_>>(),
    });
    Ok(Outcome {
        artifacts: vec![csv("validate.csv", &rows)?, json_file("validate.json", &detail)],
        summary,
        failed,
    })
}

/// Reference system used by `describe` for the gate text.
pub fn reference_gate_text() -> String {
    let sys = SpinSystem::reference(40.0);
    let tau = 1.0 / (16.0 * sys.nu_dip_hz);
    GateKind::Dq.text(tau)
}
