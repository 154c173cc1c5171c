//! End-to-end acceptance checks. Runs as a plain binary so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero on any FAIL.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use statrs::function::erf::erfc;
use uwamod_core::channel::{assemble_channel, sample_paths, ChannelMatrix, PathSet};
use uwamod_core::config::snr_from_db;
use uwamod_core::criterion::{criterion_f, criterion_value, subchannel_rates, RateVector};
use uwamod_core::dataset::{generate_dataset, DatasetPair};
use uwamod_core::evaluation::{simulate_ber, simulate_ber_modes, BerCurve, ChannelSource, EqualizerMode};
use uwamod_core::io::{decode_modem, encode_modem, Dataset};
use uwamod_core::modem::{equivalent_channel, zp_ofdm_modem, Modem};
use uwamod_core::{spawn_stream, NoiseModel, SystemConfig};
use uwamod_net::gradcheck::check_gradients;
use uwamod_net::loss::LossContext;
use uwamod_net::train::{validate, Stage};
use uwamod_net::{
    finalize_modem, init_params, train_stage1, train_stage2, ArchConfig, Checkpoint, History, NetDims,
    TrainingPlan,
};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let spent = start.elapsed();
    if spent > limit {
        Err(format!("took {spent:.1?}, limit {limit:?}"))
    } else {
        Ok(())
    }
}

/// Entrywise double sum over paths, straight from the channel expression:
/// `sum_p A_p e^{-j2pi f_c tau_p} e^{j2pi f_c a_p m'/F_s}
///  sinc(B((a_p+1)m'/F_s - tau_p) - mB/F_s)`, with a path contributing only
/// while its warped time lies inside the block, `0 <= gamma <= T`.
fn brute_channel(paths: &PathSet, c: &SystemConfig) -> DMatrix<Complex64> {
    let d = c.dims().unwrap();
    let fs = c.sample_rate_hz;
    DMatrix::from_fn(d.m_prime, d.m, |mp, m| {
        let mut acc = Complex64::new(0.0, 0.0);
        for p in 0..paths.len() {
            let (a, tau, amp) = (paths.dopplers[p], paths.delays[p], paths.amplitudes[p]);
            let gamma = (a + 1.0) * mp as f64 / fs - tau;
            if !(0.0..=c.symbol_duration).contains(&gamma) {
                continue;
            }
            let x = c.bandwidth_hz * gamma - m as f64 * c.bandwidth_hz / fs;
            let sinc = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
            acc += amp
                * Complex64::from_polar(1.0, -2.0 * PI * c.carrier_hz * tau)
                * Complex64::from_polar(1.0, 2.0 * PI * c.carrier_hz * a * mp as f64 / fs)
                * sinc;
        }
        acc
    })
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut s = spawn_stream(101, "acceptance/c1");
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let fs = [500.0, 1000.0, 2000.0][s.random_range(0..3)];
        let m = s.random_range(4..=32usize);
        let l = s.random_range(0..=m / 2);
        let n = s.random_range(1..=m);
        let config = SystemConfig {
            carrier_hz: s.random_range(0.5..3.0) * fs,
            bandwidth_hz: fs * s.random_range(0.5..=1.0),
            sample_rate_hz: fs,
            subcarriers: n,
            symbol_duration: m as f64 / fs,
            guard_interval: l as f64 / fs,
            tau_max: l as f64 / fs,
            a_max: s.random_range(0.0..0.02),
            paths: s.random_range(1..=6),
            ..SystemConfig::desk()
        };
        let d = config.dims().map_err(|e| e.to_string())?;
        if d.m > 32 {
            return Err(format!("generated M = {} > 32", d.m));
        }
        let paths = sample_paths(&config, &mut s);
        let h = assemble_channel(&paths, &config).map_err(|e| e.to_string())?;
        worst = worst.max((h.matrix() - brute_channel(&paths, &config)).camax());
    }
    within(Duration::from_secs(30), start)?;
    check(worst < 1e-12, format!("max |diff| = {worst:.2e} over 100 configs"))
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    for config in [SystemConfig::desk(), SystemConfig::paper()] {
        let d = config.dims().unwrap();
        let h = assemble_channel(&PathSet::single(Complex64::new(1.0, 0.0), 0.0, 0.0), &config)
            .map_err(|e| e.to_string())?;
        let want = DMatrix::from_fn(d.m_prime, d.m, |r, c| {
            if r == c {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        worst = worst.max((h.matrix() - want).camax());
    }
    check(worst < 1e-9, format!("max deviation from [I; 0] = {worst:.2e}"))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut s = spawn_stream(103, "acceptance/c3");
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let config = if i % 2 == 0 { SystemConfig::desk() } else { SystemConfig::paper() };
        let d = config.dims().unwrap();
        let fs = config.sample_rate_hz;
        let paths = s.random_range(1..=config.paths);
        let amps = (0..paths)
            .map(|_| Complex64::new(s.random_range(-1.0..1.0), s.random_range(-1.0..1.0)))
            .collect();
        let delays = (0..paths).map(|_| s.random_range(0..=d.l) as f64 / fs).collect();
        let set = PathSet::new(amps, delays, vec![0.0; paths]).map_err(|e| e.to_string())?;
        let h = assemble_channel(&set, &config).map_err(|e| e.to_string())?;
        let ofdm = zp_ofdm_modem(&config).map_err(|e| e.to_string())?;
        let he = equivalent_channel(&ofdm, &h).map_err(|e| e.to_string())?;
        let m = he.matrix();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                if r != c {
                    worst = worst.max(m[(r, c)].norm());
                }
            }
        }
    }
    within(Duration::from_secs(10), start)?;
    check(worst < 1e-9, format!("max off-diagonal |H_e| = {worst:.2e} over 50 channels"))
}

fn criterion_4() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for (name, config) in [("paper-profile", SystemConfig::paper()), ("desk", SystemConfig::desk())] {
        let d = config.dims().unwrap();
        let ofdm = zp_ofdm_modem(&config).map_err(|e| e.to_string())?;
        let e_phi: f64 = ofdm.phi().iter().map(|z| z.norm_sqr()).sum();
        let e_psi: f64 = ofdm.psi_h().iter().map(|z| z.norm_sqr()).sum();
        let n = d.n as f64;
        let target = n * d.m_prime as f64 / d.m as f64;
        let rel_phi = (e_phi - n).abs() / n;
        let rel_psi = (e_psi - target).abs() / target;
        pass &= rel_phi < 1e-12 && rel_psi < 1e-9;
        details.push(format!("{name}: |Phi|^2={e_phi:.12} (N={n}), |Psi|^2={e_psi:.12} (target {target})"));
    }
    check(pass, details.join("; "))
}

/// Explicit per-entry sums for the sub-channel rates.
fn explicit_rates(he: &DMatrix<Complex64>, psi: &DMatrix<Complex64>, noise: &NoiseModel) -> Vec<f64> {
    let n = he.nrows();
    (0..n)
        .map(|row| {
            let mut signal = 0.0;
            let mut interference = 0.0;
            for col in 0..n {
                let p = he[(row, col)].re * he[(row, col)].re + he[(row, col)].im * he[(row, col)].im;
                if col == row {
                    signal = p;
                } else {
                    interference += p;
                }
            }
            let mut psi_norm = 0.0;
            for col in 0..psi.ncols() {
                psi_norm += psi[(row, col)].norm_sqr();
            }
            let sinr = signal / (interference + noise.sigma_n_sq / noise.sigma_s_sq * psi_norm);
            (1.0 + sinr).log2()
        })
        .collect()
}

fn criterion_5() -> Outcome {
    let mut s = spawn_stream(105, "acceptance/c5");
    let mut worst_rate: f64 = 0.0;
    let mut worst_f: f64 = 0.0;
    for _ in 0..100 {
        let n = s.random_range(2..=12usize);
        let mp = s.random_range(n..=3 * n);
        let mut draw = |r, c| {
            DMatrix::from_fn(r, c, |_, _| Complex64::new(s.random_range(-1.0..1.0), s.random_range(-1.0..1.0)))
        };
        let he = draw(n, n);
        let psi = draw(n, mp);
        let noise = snr_from_db(s.random_range(-5.0..25.0));
        let k = s.random_range(0.0..20.0);
        let got = subchannel_rates(&uwamod_core::EquivalentChannel(he.clone()), &psi, &noise)
            .map_err(|e| e.to_string())?;
        let want = explicit_rates(&he, &psi, &noise);
        for (a, b) in got.0.iter().zip(&want) {
            worst_rate = worst_rate.max((a - b).abs());
        }
        let min = want.iter().cloned().fold(f64::INFINITY, f64::min);
        let f_want = want.iter().sum::<f64>() + k * n as f64 * min;
        worst_f = worst_f.max((criterion_f(&got, k).f - f_want).abs());
    }
    let twenty_two = criterion_f(&RateVector(vec![1.0, 1.0]), 10.0).f;
    check(
        worst_rate < 1e-12 && worst_f < 1e-12 && twenty_two == 22.0,
        format!("max rate diff {worst_rate:.2e}, max f diff {worst_f:.2e}, f(1,1;K=10,N=2) = {twenty_two}"),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let config = SystemConfig::desk();
    let dims = NetDims::from(config.dims().unwrap());
    let arch = ArchConfig { pathway_channels: 2, fused_channels: 2, pool_grid: [4, 4], fc_hidden: [64, 64], ..ArchConfig::default() };
    let params = init_params(&arch, dims, &mut spawn_stream(106, "acceptance/c6/init")).map_err(|e| e.to_string())?;
    let pairs = generate_dataset(&config, 4, &mut spawn_stream(106, "acceptance/c6/pairs")).map_err(|e| e.to_string())?;
    let ctx = LossContext::new(&config).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut worst_name = String::new();
    for (stage, batch) in [(Stage::One, 3), (Stage::Two, 4)] {
        let refs: Vec<&DatasetPair> = pairs[..batch].iter().collect();
        let checks = check_gradients(&params, &refs, &ctx, stage, 8, 1e-5, &mut spawn_stream(106, "acceptance/c6/probe"))
            .map_err(|e| e.to_string())?;
        for c in checks {
            if c.worst() > worst {
                worst = c.worst();
                worst_name = format!("{} ({stage:?})", c.name);
            }
        }
    }
    within(Duration::from_secs(300), start)?;
    check(worst < 1e-5, format!("worst relative error {worst:.2e} at {worst_name}, 27 groups x 2 losses"))
}

/// The desk-profile model shared by criteria 7, 8, 10 and 11.
struct Trained {
    config: SystemConfig,
    val_loss1_after_stage1: f64,
    stage2_entry_spread: f64,
    history: History,
    modem: Modem,
    test: Vec<DatasetPair>,
    seconds: f64,
}

fn train_desk() -> Result<Trained, String> {
    let start = Instant::now();
    let config = SystemConfig::desk();
    let plan = TrainingPlan::desk();
    let e = |err: uwamod_core::Error| err.to_string();
    let train = generate_dataset(&config, plan.train, &mut spawn_stream(config.seed, "dataset/train")).map_err(e)?;
    let val = generate_dataset(&config, plan.val, &mut spawn_stream(config.seed, "dataset/val")).map_err(e)?;
    let test = generate_dataset(&config, plan.test, &mut spawn_stream(config.seed, "dataset/test")).map_err(e)?;
    let dims = NetDims::from(config.dims().map_err(e)?);
    let mut params = init_params(&ArchConfig::desk(), dims, &mut spawn_stream(config.seed, "init")).map_err(e)?;
    let mut history = History::default();
    history.extend(train_stage1(&mut params, &train, &val, &plan, &config).map_err(e)?.history);
    let ctx = LossContext::new(&config).map_err(e)?;
    let val_loss1_after_stage1 = validate(&params, &ctx, &val).map_err(e)?.loss1;
    let stage2 = train_stage2(&mut params, &train, &val, &plan, &config).map_err(e)?;
    let stage2_entry_spread = stage2.entry.spread;
    history.extend(stage2.history);
    let modem = finalize_modem(&params, &val).map_err(e)?;
    Ok(Trained {
        config,
        val_loss1_after_stage1,
        stage2_entry_spread,
        history,
        modem,
        test,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn criterion_7(t: &Trained) -> Outcome {
    let start = Instant::now();
    let noise = snr_from_db(t.config.snr_train_db);
    let ofdm = zp_ofdm_modem(&t.config).map_err(|e| e.to_string())?;
    let (mut f_learned, mut f_ofdm, mut min_learned, mut min_ofdm) = (0.0, 0.0, 0.0, 0.0);
    for pair in &t.test {
        for (modem, f, min) in [(&t.modem, &mut f_learned, &mut min_learned), (&ofdm, &mut f_ofdm, &mut min_ofdm)] {
            let he = equivalent_channel(modem, &pair.h).map_err(|e| e.to_string())?;
            let v = criterion_value(&he, modem.psi_h(), &noise, t.config.k).map_err(|e| e.to_string())?;
            *f += v.f;
            *min += v.min_rate;
        }
    }
    let count = t.test.len() as f64;
    let (f_learned, f_ofdm, min_learned, min_ofdm) =
        (f_learned / count, f_ofdm / count, min_learned / count, min_ofdm / count);
    let total = t.seconds + start.elapsed().as_secs_f64();
    let detail = format!(
        "stage-I val loss1 {:.3}; test mean f {f_learned:.3} vs ZP-OFDM {f_ofdm:.3}; \
         mean min-rate {min_learned:.4} vs {min_ofdm:.4}; {total:.0} s",
        t.val_loss1_after_stage1
    );
    check(
        t.val_loss1_after_stage1 < 0.0 && f_learned > f_ofdm && min_learned >= min_ofdm && total < 900.0,
        detail,
    )
}

fn criterion_8(t: &Trained) -> Outcome {
    let spreads: Vec<f64> = t.history.stage(Stage::Two).map(|r| r.val_spread).collect();
    let (Some(first), Some(last)) = (spreads.first(), spreads.last()) else {
        return Err("no Stage-II epochs recorded".into());
    };
    let entry = t.stage2_entry_spread;
    let drop = 1.0 - last / entry;
    check(
        drop >= 0.5,
        format!(
            "validation spread {entry:.4} (start of epoch 1) -> {last:.4} (end of epoch {}), drop {:.1}%; \
             end of epoch 1 {first:.4}",
            spreads.len(),
            100.0 * drop
        ),
    )
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let n = 64;
    let eye = DMatrix::<Complex64>::identity(n, n);
    let modem = Modem::new(eye.clone(), eye).map_err(|e| e.to_string())?;
    let source = ChannelSource::Fixed(ChannelMatrix::identity(n, n));
    let snrs = [0.0, 2.0, 4.0, 6.0, 8.0];
    let blocks = 1_000_000usize.div_ceil(2 * n);
    let curve = simulate_ber(&modem, "identity", &source, &snrs, EqualizerMode::IciAware, blocks, &mut spawn_stream(9, "acceptance/c9"))
        .map_err(|e| e.to_string())?;
    let mut pass = true;
    let mut parts = Vec::new();
    for p in &curve.points {
        let q = 0.5 * erfc((10f64.powf(p.snr_db / 10.0)).sqrt() / 2f64.sqrt());
        let sigma = (q * (1.0 - q) / p.bits as f64).sqrt();
        let z = (p.ber - q) / sigma;
        pass &= p.bits >= 1_000_000 && z.abs() <= 3.0;
        parts.push(format!("{} dB: {:.5} vs {:.5} ({z:+.2} sd)", p.snr_db, p.ber, q));
    }
    within(Duration::from_secs(120), start)?;
    check(pass, format!("{} bits/point; {}", curve.points[0].bits, parts.join(", ")))
}

fn ber_at(curves: &[BerCurve], mode: EqualizerMode) -> (f64, u64) {
    let c = curves.iter().find(|c| c.mode == mode).expect("mode simulated");
    (c.points[0].ber, c.points[0].bits)
}

/// BER ordering at 20 dB under a given Doppler bound.
fn ber_ordering(t: &Trained, a_max: f64) -> Outcome {
    let mut config = t.config.clone();
    config.a_max = a_max;
    let source = ChannelSource::Random(config);
    let modes = [EqualizerMode::IciAware, EqualizerMode::IciIgnorant];
    let blocks = 100_000usize.div_ceil(2 * t.config.subcarriers);
    let ofdm = zp_ofdm_modem(&t.config).map_err(|e| e.to_string())?;
    let run = |modem: &Modem, label: &str| {
        simulate_ber_modes(modem, label, &source, &[20.0], &modes, blocks, &mut spawn_stream(t.config.seed, "acceptance/ber"))
            .map_err(|e| e.to_string())
    };
    let learned = run(&t.modem, "learned")?;
    let base = run(&ofdm, "zp-ofdm")?;
    let (la, bits) = ber_at(&learned, EqualizerMode::IciAware);
    let (li, _) = ber_at(&learned, EqualizerMode::IciIgnorant);
    let (oa, _) = ber_at(&base, EqualizerMode::IciAware);
    let (oi, _) = ber_at(&base, EqualizerMode::IciIgnorant);
    check(
        bits >= 100_000 && li <= oi && la <= li && oa <= oi,
        format!(
            "a_max {a_max}, {bits} bits: learned aware {la:.5} / ignorant {li:.5}; ZP-OFDM aware {oa:.5} / ignorant {oi:.5}"
        ),
    )
}

fn criterion_12() -> Outcome {
    let config = SystemConfig::desk();
    let gen = || generate_dataset(&config, 20, &mut spawn_stream(112, "acceptance/c12"));
    let a = Dataset { config: config.clone(), pairs: gen().map_err(|e| e.to_string())? };
    let b = Dataset { config: config.clone(), pairs: gen().map_err(|e| e.to_string())? };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (pa, pb) = (dir.path().join("a.uwad"), dir.path().join("b.uwad"));
    a.save(&pa).map_err(|e| e.to_string())?;
    b.save(&pb).map_err(|e| e.to_string())?;
    let identical_files = std::fs::read(&pa).unwrap() == std::fs::read(&pb).unwrap();
    let dataset_rt = Dataset::load(&pa).map_err(|e| e.to_string())? == a;

    let modem = zp_ofdm_modem(&config).map_err(|e| e.to_string())?;
    let bytes = encode_modem(&modem);
    let back = decode_modem(&bytes).map_err(|e| e.to_string())?;
    let modem_rt = back == modem && encode_modem(&back) == bytes;

    let dims = NetDims::from(config.dims().unwrap());
    let params = init_params(&ArchConfig::desk(), dims, &mut spawn_stream(112, "acceptance/c12/init")).map_err(|e| e.to_string())?;
    let ck = Checkpoint { params, adam: None };
    let path = dir.path().join("net.uwnp");
    ck.save(&path).map_err(|e| e.to_string())?;
    let ck_back = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    let ck_rt = ck_back == ck && ck_back.encode() == ck.encode();
    check(
        identical_files && dataset_rt && modem_rt && ck_rt,
        format!("identical dataset files {identical_files}; round trips: dataset {dataset_rt}, modem {modem_rt}, checkpoint {ck_rt}"),
    )
}

fn report(number: u32, outcome: Outcome) -> bool {
    match outcome {
        Ok(detail) => {
            println!("criterion {number:>2}: PASS - {detail}");
            true
        }
        Err(detail) => {
            println!("criterion {number:>2}: FAIL - {detail}");
            false
        }
    }
}

fn main() {
    let mut passed = 0;
    let mut total = 0;
    let mut run = |n: u32, o: Outcome| {
        total += 1;
        if report(n, o) {
            passed += 1;
        }
    };
    run(1, criterion_1());
    run(2, criterion_2());
    run(3, criterion_3());
    run(4, criterion_4());
    run(5, criterion_5());
    run(6, criterion_6());
    match train_desk() {
        Ok(t) => {
            run(7, criterion_7(&t));
            run(8, criterion_8(&t));
            run(9, criterion_9());
            run(10, ber_ordering(&t, t.config.a_max));
            run(11, ber_ordering(&t, 2.0 * t.config.a_max));
        }
        Err(e) => {
            for n in [7, 8, 10, 11] {
                run(n, Err(format!("desk training failed: {e}")));
            }
            run(9, criterion_9());
        }
    }
    run(12, criterion_12());
    println!("acceptance: {passed}/{total} criteria passed");
    if passed != total {
        std::process::exit(1);
    }
}
