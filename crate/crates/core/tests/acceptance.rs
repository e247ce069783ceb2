//! Acceptance run: one line per criterion, non-zero exit if any fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use adp_core::embfile::{read_embeddings, write_embeddings};
use adp_core::flops::{
    adp_flops, adp_flops_for_k, adp_savings, baseline_flops, calibrate, episode_expected_flops,
    layer_flops, preset, scoring_flops, ModelDims, ReferenceCosts,
};
use adp_core::gate::{gate_trace, GateConfig, GateRule, ThirdCase, VisionState};
use adp_core::harness::report::round_sig6;
use adp_core::harness::{
    extract_deltas, load_episode, run_episode, synth_episode, RunConfig, RunReport, SynthProfile,
};
use adp_core::scoring::{
    assemble_pruned, prune_pipeline, topk_per_view, EmbeddingMatrix, ImportanceScores,
    ProjectionWeights, Segment, SegmentKind,
};
use adp_core::se3::{fk_window, ActionIncrement, ActionWindow, FkConvention};
use adp_core::stats::{
    entropy, normalize, participation_ratio, random_retention_probability, ScoreDistribution,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, || {
        format!("took {elapsed:?}, limit {limit:?}")
    })
}

// ---------------------------------------------------------------- kinematics

type M4 = [[f64; 4]; 4];

fn homogeneous(a: &ActionIncrement) -> M4 {
    let (sx, cx) = a.droll.sin_cos();
    let (sy, cy) = a.dpitch.sin_cos();
    let (sz, cz) = a.dyaw.sin_cos();
    [
        [cy * cz, -cy * sz, sy, a.dx],
        [
            cx * sz + sx * sy * cz,
            cx * cz - sx * sy * sz,
            -sx * cy,
            a.dy,
        ],
        [
            sx * sz - cx * sy * cz,
            sx * cz + cx * sy * sz,
            cx * cy,
            a.dz,
        ],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

fn m4_mul(a: &M4, b: &M4) -> M4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn fk_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF00D);
    let windows: Vec<ActionWindow> = (0..1000)
        .map(|i| {
            let omega = rng.random_range(1..=16);
            let incs = (0..omega)
                .map(|_| {
                    ActionIncrement::from_array([
                        rng.random_range(-0.1..=0.1),
                        rng.random_range(-0.1..=0.1),
                        rng.random_range(-0.1..=0.1),
                        rng.random_range(-0.3..=0.3),
                        rng.random_range(-0.3..=0.3),
                        rng.random_range(-0.3..=0.3),
                        rng.random_range(-1.0..=1.0),
                    ])
                })
                .collect();
            ActionWindow::new(i + 1, incs)
        })
        .collect();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for w in &windows {
        let got = fk_window(w).map_err(|e| e.to_string())?;
        let mut t: M4 = [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let mut want = vec![[0.0; 3]];
        for inc in &w.increments {
            t = m4_mul(&t, &homogeneous(inc));
            want.push([t[0][3], t[1][3], t[2][3]]);
        }
        check(got.len() == want.len(), || {
            format!("window {}: {} positions", w.index, got.len())
        })?;
        for (g, o) in got.iter().zip(&want) {
            for c in 0..3 {
                worst = worst.max((g[c] - o[c]).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    check(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!(
        "1000 windows, max |diff| {worst:.1e}, {elapsed:.2?}"
    ))
}

// ---------------------------------------------------------------------- gate

/// Straight-line replay of the gating rules with a running sum.
fn gate_reference(d: &[f64], cfg: &GateConfig) -> Vec<u8> {
    let mut out = Vec::with_capacity(d.len());
    let (mut prev, mut run, mut sum) = (0u8, 0usize, 0.0f64);
    for i in 0..d.len() {
        sum += d[i];
        let raw = match cfg.rule {
            GateRule::Mean => u8::from(d[i] >= sum / (i + 1) as f64),
            GateRule::Extrema => {
                let lo = (i + 1).saturating_sub(cfg.tau);
                let mut hi_v = f64::NEG_INFINITY;
                let mut lo_v = f64::INFINITY;
                for &x in &d[lo..=i] {
                    hi_v = hi_v.max(x);
                    lo_v = lo_v.min(x);
                }
                if d[i] >= hi_v {
                    1
                } else if d[i] <= lo_v {
                    0
                } else if cfg.third_case == ThirdCase::Inherit {
                    prev
                } else {
                    1
                }
            }
        };
        let s = if i < cfg.cold_start_windows || run >= cfg.max_consecutive_pruned {
            0
        } else {
            raw
        };
        run = if s == 1 { run + 1 } else { 0 };
        prev = s;
        out.push(s);
    }
    out
}

fn random_stream(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<f64> {
    let n = rng.random_range(1..=max_len);
    match rng.random_range(0..3) {
        // continuous
        0 => (0..n).map(|_| rng.random_range(0.0..0.5)).collect(),
        // heavy ties
        1 => (0..n)
            .map(|_| rng.random_range(0..4) as f64 * 0.01)
            .collect(),
        // drifting with zeros
        _ => (0..n)
            .map(|i| {
                if rng.random_bool(0.2) {
                    0.0
                } else {
                    (i as f64 * 0.1).sin().abs() * 0.2
                }
            })
            .collect(),
    }
}

fn bits(decisions: &[VisionState]) -> Vec<u8> {
    decisions.iter().map(|d| d.as_bit()).collect()
}

fn gate_configs(tau: usize) -> Vec<GateConfig> {
    let mut out = Vec::new();
    for rule in [GateRule::Mean, GateRule::Extrema] {
        for third_case in [ThirdCase::Inherit, ThirdCase::ForcePrune] {
            for cold_start_windows in [0, 1, 2, 4] {
                for max_consecutive_pruned in [1, 2, 3, 6] {
                    out.push(GateConfig {
                        rule,
                        tau,
                        third_case,
                        cold_start_windows,
                        max_consecutive_pruned,
                        omega: 8,
                    });
                }
            }
        }
    }
    out
}

fn gate_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6A7E);
    let start = Instant::now();
    let mut traces = 0usize;
    for _ in 0..10_000 {
        let d = random_stream(&mut rng, 200);
        let tau = rng.random_range(1..=6);
        for cfg in gate_configs(tau) {
            let got = bits(&gate_trace(&d, &cfg).map_err(|e| e.to_string())?.decisions);
            let want = gate_reference(&d, &cfg);
            check(got == want, || format!("mismatch for {cfg:?} on {d:?}"))?;
            traces += 1;
        }
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(10))?;
    Ok(format!(
        "{traces} traces (10000 streams x 64 configs), {elapsed:.2?}"
    ))
}

fn gate_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1A7);
    let cases = 2000;
    for _ in 0..cases {
        let d = random_stream(&mut rng, 120);
        let cfg = GateConfig {
            rule: if rng.random_bool(0.5) {
                GateRule::Mean
            } else {
                GateRule::Extrema
            },
            tau: rng.random_range(1..=6),
            third_case: if rng.random_bool(0.5) {
                ThirdCase::Inherit
            } else {
                ThirdCase::ForcePrune
            },
            cold_start_windows: rng.random_range(0..=5),
            max_consecutive_pruned: rng.random_range(1..=5),
            omega: 8,
        };
        let s = bits(&gate_trace(&d, &cfg).map_err(|e| e.to_string())?.decisions);

        let longest = s.split(|&b| b == 0).map(<[u8]>::len).max().unwrap_or(0);
        check(longest <= cfg.max_consecutive_pruned, || {
            format!(
                "run of {longest} pruned windows exceeds cap {}",
                cfg.max_consecutive_pruned
            )
        })?;
        check(
            s.iter().take(cfg.cold_start_windows).all(|&b| b == 0),
            || format!("pruned during cold start: {s:?}"),
        )?;

        // Powers of two scale exactly; arbitrary factors are safe once exact
        // ties are absent, so only continuous streams get those.
        let continuous = {
            let mut v = d.clone();
            v.sort_by(f64::total_cmp);
            v.windows(2).all(|w| w[0] != w[1])
        };
        let c = if continuous {
            10f64.powf(rng.random_range(-3.0..3.0))
        } else {
            2f64.powi(rng.random_range(-20..=20))
        };
        let scaled: Vec<f64> = d.iter().map(|x| x * c).collect();
        let s2 = bits(
            &gate_trace(&scaled, &cfg)
                .map_err(|e| e.to_string())?
                .decisions,
        );
        check(s == s2, || {
            format!("scaling by {c} changed decisions for {cfg:?}")
        })?;
    }
    Ok(format!(
        "{cases} cases each: run cap, cold start, positive rescaling"
    ))
}

// ---------------------------------------------------------------------- topk

/// Integer-only selection for rho = r/10 and alpha_c = a_c/10.
fn topk_integer(scores: &[i64], views: &[usize], r: usize, a: &[usize]) -> Option<Vec<usize>> {
    let l: usize = views.iter().sum();
    let k = r * l / 10;
    if k == 0 {
        return None;
    }
    let mut q: Vec<usize> = a.iter().map(|&ac| ac * k / 10).collect();
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by_key(|&c| (std::cmp::Reverse(a[c]), c));
    let mut left = k - q.iter().sum::<usize>();
    for &c in order.iter().cycle() {
        if left == 0 {
            break;
        }
        q[c] += 1;
        left -= 1;
    }
    let mut kept = Vec::new();
    let mut off = 0;
    for (c, &len) in views.iter().enumerate() {
        if q[c] > len {
            return None;
        }
        let mut idx: Vec<usize> = (0..len).collect();
        idx.sort_by_key(|&i| (std::cmp::Reverse(scores[off + i]), i));
        let mut chosen: Vec<usize> = idx[..q[c]].iter().map(|i| i + off).collect();
        chosen.sort_unstable();
        kept.extend(chosen);
        off += len;
    }
    Some(kept)
}

fn topk_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x70C);
    let mut exhaustive = 0usize;
    for l in 1..=12usize {
        let mut layouts: Vec<(Vec<usize>, Vec<Vec<usize>>)> = vec![(vec![l], vec![vec![10]])];
        for first in 1..l {
            let grid = (0..=10).map(|a| vec![a, 10 - a]).collect();
            layouts.push((vec![first, l - first], grid));
        }
        for (views, alphas) in &layouts {
            for a in alphas {
                for r in 1..=10 {
                    for _ in 0..4 {
                        let scores: Vec<i64> = (0..l).map(|_| rng.random_range(0..4)).collect();
                        let phi = ImportanceScores::new(
                            scores.iter().map(|&s| s as f64).collect(),
                            views.clone(),
                        )
                        .map_err(|e| e.to_string())?;
                        let alpha: Vec<f64> = a.iter().map(|&x| x as f64 / 10.0).collect();
                        let got = topk_per_view(&phi, r as f64 / 10.0, &alpha).ok().map(|d| {
                            assert_eq!(d.kept_count(), d.k);
                            d.global_indices()
                        });
                        let want = topk_integer(&scores, views, r, a);
                        check(got == want, || {
                            format!("L={l} views={views:?} alpha={a:?} rho={r}/10 scores={scores:?}: {got:?} vs {want:?}")
                        })?;
                        exhaustive += 1;
                    }
                }
            }
        }
    }

    for _ in 0..1000 {
        let c = rng.random_range(1..=4);
        let views: Vec<usize> = (0..c).map(|_| rng.random_range(16..=600)).collect();
        let l: usize = views.iter().sum();
        let w: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
        let ws: f64 = w.iter().sum();
        let alpha: Vec<f64> = w.iter().map(|x| x / ws).collect();
        let rho = rng.random_range(0.05..=1.0);
        let values: Vec<f64> = (0..l)
            .map(|_| {
                if rng.random_bool(0.1) {
                    0.5
                } else {
                    rng.random_range(-3.0..3.0)
                }
            })
            .collect();
        let phi =
            ImportanceScores::new(values.clone(), views.clone()).map_err(|e| e.to_string())?;
        let Ok(d) = topk_per_view(&phi, rho, &alpha) else {
            continue;
        };
        check(
            d.kept_count() == d.k && d.k == (rho * l as f64 + 1e-9).floor() as usize,
            || format!("|kept| {} vs k {}", d.kept_count(), d.k),
        )?;
        let mut off = 0;
        for (ci, &len) in views.iter().enumerate() {
            let mut all: Vec<(f64, usize)> = (0..len).map(|i| (values[off + i], i)).collect();
            all.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
            let mut want: Vec<usize> = all[..d.k_per_view[ci]].iter().map(|x| x.1).collect();
            want.sort_unstable();
            check(want == d.kept[ci], || {
                format!("view {ci} selection differs")
            })?;
            off += len;
        }
    }

    let phi = ImportanceScores::new((0..20).map(|i| i as f64).collect(), vec![10, 10])
        .map_err(|e| e.to_string())?;
    let d = topk_per_view(&phi, 0.5, &[0.4, 0.6]).map_err(|e| e.to_string())?;
    check(d.k == 10 && d.k_per_view == vec![4, 6], || {
        format!("4:6 split gave {:?}", d.k_per_view)
    })?;
    Ok(format!(
        "{exhaustive} exhaustive + 1000 random instances, 4:6 split -> {:?}",
        d.k_per_view
    ))
}

// --------------------------------------------------------------------- flops

fn big_layer(s: u64, d: u64, m: u64) -> BigUint {
    let (s, d, m) = (BigUint::from(s), BigUint::from(d), BigUint::from(m));
    BigUint::from(2u32) * &s * &s * &d
        + BigUint::from(4u32) * &s * &d * &d
        + BigUint::from(6u32) * &s * &d * &m
}

fn random_dims(rng: &mut ChaCha8Rng) -> ModelDims {
    let heads = rng.random_range(1..=64);
    let head_dim = rng.random_range(1..=256);
    ModelDims {
        d_model: heads * head_dim,
        d_ff: rng.random_range(1..=32768),
        layers: rng.random_range(1..=96),
        heads,
        head_dim,
        l_vis: rng.random_range(1..=2048),
        l_txt: rng.random_range(1..=512),
        l_prop: rng.random_range(0..=4),
        l_act: rng.random_range(0..=128),
        eos: rng.random_bool(0.5),
    }
}

fn flops_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF10);
    check(layer_flops(1, 1, 1).ok() == Some(12), || {
        "layer_flops(1,1,1) != 12".into()
    })?;
    for _ in 0..10_000 {
        let dims = random_dims(&mut rng);
        let rho = rng.random_range(0.0001..=1.0);
        let q = rng.random_range(1..=1000u64);
        let gamma = Ratio::new(rng.random_range(0..=q), q);
        let t = rng.random_range(1..=500u64);
        let e = |x: adp_core::AdpError| x.to_string();

        let base = baseline_flops(&dims).map_err(e)?;
        let big_base =
            BigUint::from(dims.layers) * big_layer(dims.seq_len(), dims.d_model, dims.d_ff);
        check(BigUint::from(base) == big_base, || {
            format!("F_base mismatch for {dims:?}")
        })?;
        let adp = adp_flops(&dims, rho).map_err(e)?;
        let k = (rho * dims.l_vis as f64 + 1e-9).floor() as u64;
        let big_adp = BigUint::from(scoring_flops(&dims).map_err(e)?)
            + BigUint::from(dims.layers)
                * big_layer(dims.seq_len() - dims.l_vis + k, dims.d_model, dims.d_ff);
        check(BigUint::from(adp) == big_adp, || {
            format!("F_ADP mismatch for {dims:?} rho={rho}")
        })?;

        let delta = adp_savings(&dims, rho).map_err(e)?;
        check(delta == base as i128 - adp as i128, || {
            "savings != F_base - F_ADP".into()
        })?;

        let ep = episode_expected_flops(&dims, rho, gamma, t).map_err(e)?;
        let total = Ratio::from_integer(t as i128 * base as i128);
        check(ep.expected + ep.savings == total, || {
            format!("E + savings != T F_base for {dims:?}")
        })?;
        check(ep.base_total == t as u128 * base, || "base total".into())?;

        let rho2 = rng.random_range(rho..=1.0);
        check(adp_flops(&dims, rho2).map_err(e)? >= adp, || {
            format!("F_ADP not monotone at {rho} -> {rho2}")
        })?;
        let k2 = rng.random_range(0..dims.l_vis);
        check(
            adp_flops_for_k(&dims, k2).map_err(e)? < adp_flops_for_k(&dims, k2 + 1).map_err(e)?,
            || "F_ADP not increasing in k".into(),
        )?;
    }
    Ok(
        "10000 tuples: savings, conservation, BigUint cross-check, monotone; layer_flops(1,1,1)=12"
            .into(),
    )
}

// --------------------------------------------------------------- calibration

fn calibration() -> Outcome {
    let start = Instant::now();
    let refs = ReferenceCosts {
        base: 7.91e12,
        points: vec![
            (0.3, 5.85e12),
            (0.4, 6.14e12),
            (0.5, 6.43e12),
            (0.6, 6.74e12),
            (0.7, 7.03e12),
        ],
    };
    let widths = preset("llama2-7b-oft").map_err(|e| e.to_string())?;
    let report = calibrate(&widths, &refs, 1024).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    println!("    calibration report:");
    for fit in [&report.per_forward, &report.episode_average] {
        println!(
            "      {:?}: l_vis={} l_other={} gamma={:.4} base={:.4e} (err {:.3}%) max_err={:.3}%",
            fit.interpretation,
            fit.l_vis,
            fit.l_other,
            fit.gamma,
            fit.base_model,
            fit.base_rel_error * 100.0,
            fit.max_rel_error * 100.0
        );
        for r in &fit.residuals {
            println!(
                "        rho={:.1} model={:.4e} target={:.2e} err={:.3}%",
                r.rho,
                r.model,
                r.target,
                r.rel_error * 100.0
            );
        }
    }
    within(elapsed, Duration::from_secs(30))?;
    let best = report.best_fit();
    if best.max_rel_error <= 0.05 {
        Ok(format!(
            "best {:?}, max rel error {:.3}% <= 5%, {elapsed:.2?}",
            report.best,
            best.max_rel_error * 100.0
        ))
    } else if best.max_rel_error <= 0.10 {
        Ok(format!(
            "best {:?}, max rel error {:.3}% (above 5%, within the 10% fallback: sequence lengths are not published)",
            report.best,
            best.max_rel_error * 100.0
        ))
    } else {
        Err(format!(
            "best max rel error {:.3}%",
            best.max_rel_error * 100.0
        ))
    }
}

// --------------------------------------------------------------------- stats

fn stats_bounds() -> Outcome {
    for v in [2usize, 10, 512] {
        let p = normalize(&vec![1.0; v]).map_err(|e| e.to_string())?;
        let (pr, h) = (participation_ratio(&p), entropy(&p));
        check(
            (pr - v as f64).abs() <= 1e-9 && (h - (v as f64).ln()).abs() <= 1e-9,
            || format!("uniform V={v}: PR {pr}, H {h}"),
        )?;
        let mut one = vec![0.0; v];
        one[v / 2] = 1.0;
        let p = ScoreDistribution::new(one).map_err(|e| e.to_string())?;
        check(participation_ratio(&p) == 1.0 && entropy(&p) == 0.0, || {
            format!("one-hot V={v}")
        })?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x57A7);
    for _ in 0..10_000 {
        let n = rng.random_range(1..=512);
        let sparse = rng.random_bool(0.3);
        let phi: Vec<f64> = (0..n)
            .map(|_| {
                if sparse && rng.random_bool(0.8) {
                    0.0
                } else {
                    rng.random_range(0.0..1.0f64).powi(rng.random_range(1..6))
                }
            })
            .collect();
        let Ok(p) = normalize(&phi) else { continue };
        let (pr, h) = (participation_ratio(&p), entropy(&p));
        check(pr <= h.exp() * (1.0 + 1e-12), || {
            format!("PR {pr} > e^H {}", h.exp())
        })?;
    }
    Ok("uniform/one-hot at V in {2,10,512}; PR <= e^H over 10000 distributions".into())
}

fn hypergeometric_vs_monte_carlo() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x4E7);
    let trials = 1_000_000u32;
    let mut worst_sigma = 0.0f64;
    for _ in 0..20 {
        let v = rng.random_range(1..=512u64);
        let m = rng.random_range(0..=16u64.min(v));
        let k = rng.random_range(0..=v);
        let r = rng.random_range(0..=m);
        let p = random_retention_probability(v, m, k, r).map_err(|e| e.to_string())?;
        // Kept set fixed to 0..k; targets drawn uniformly without replacement.
        let hits = (0..trials)
            .filter(|_| {
                rand::seq::index::sample(&mut rng, v as usize, m as usize)
                    .iter()
                    .filter(|&t| (t as u64) < k)
                    .count() as u64
                    >= r
            })
            .count();
        let est = hits as f64 / trials as f64;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        let dev = (est - p).abs();
        if sigma == 0.0 {
            check(dev == 0.0, || {
                format!("(V={v}, m={m}, k={k}, r={r}): exact {p}, simulated {est}")
            })?;
        } else {
            worst_sigma = worst_sigma.max(dev / sigma);
            check(dev <= 3.0 * sigma, || {
                format!(
                    "(V={v}, m={m}, k={k}, r={r}): exact {p}, simulated {est}, {:.2} sigma",
                    dev / sigma
                )
            })?;
        }
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(60))?;
    Ok(format!(
        "20 tuples x 1e6 trials, worst {worst_sigma:.2} sigma, {elapsed:.2?}"
    ))
}

// ----------------------------------------------------------------- end-to-end

fn adp_bin(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_adp"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "adp {args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out.stdout)
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ep = dir.path().join("ep.jsonl");
    let ep_s = ep.to_str().unwrap();
    adp_bin(&[
        "synth",
        "--seed",
        "42",
        "--profile",
        "mixed",
        "--windows",
        "50",
        "--out",
        ep_s,
    ])?;
    let sim = [
        "simulate",
        "--episode",
        ep_s,
        "--preset",
        "llama2-7b-oft",
        "--l-vis",
        "512",
        "--l-txt",
        "34",
        "--l-prop",
        "1",
        "--l-act",
        "56",
    ];
    let a = adp_bin(&sim)?;
    let b = adp_bin(&sim)?;
    check(a == b, || "reports differ between runs".into())?;

    let report =
        RunReport::from_json(std::str::from_utf8(&a).unwrap()).map_err(|e| e.to_string())?;
    let log = load_episode(&ep).map_err(|e| e.to_string())?;
    let cfg = RunConfig::default();
    let deltas = extract_deltas(&log, FkConvention::default()).map_err(|e| e.to_string())?;
    let trace = gate_trace(&deltas, &cfg.gate_config(8).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let s = &report.summary;
    check(report.decisions() == trace.decisions, || {
        "decisions differ from gate_trace".into()
    })?;
    let gamma_from_counts = s.pruned_windows as f64 / s.windows as f64;
    check(
        gamma_from_counts.to_bits() == trace.gamma.to_bits() && s.gamma == round_sig6(trace.gamma),
        || format!("gamma {} vs gate_trace {}", s.gamma, trace.gamma),
    )?;
    check(
        s.f_base_total as i128 - s.f_episode as i128 == s.savings,
        || "conservation".into(),
    )?;

    let cfg = RunConfig::from_json(r#"{"dims":{"preset":"llama2-7b-oft","l_vis":512,"l_txt":91}}"#)
        .map_err(|e| e.to_string())?;
    let gamma = |p| -> Result<f64, String> {
        let log = synth_episode(42, p, 50, 8).map_err(|e| e.to_string())?;
        let r = run_episode(&log, &cfg, None).map_err(|e| e.to_string())?;
        Ok(r.summary.gamma)
    };
    let (coarse, fine) = (gamma(SynthProfile::Coarse)?, gamma(SynthProfile::Fine)?);
    check(coarse > fine, || {
        format!("coarse gamma {coarse} <= fine gamma {fine}")
    })?;
    Ok(format!(
        "{} byte-identical report bytes, gamma {} = gate_trace, coarse {coarse:.2} > fine {fine:.2}",
        a.len(),
        s.gamma
    ))
}

// ------------------------------------------------------------- pruned layout

fn random_matrix(rng: &mut ChaCha8Rng, cols: usize) -> EmbeddingMatrix {
    let mut segs = vec![Segment::new(SegmentKind::Bos, 1)];
    let views = rng.random_range(1..=3);
    for v in 0..views {
        segs.push(Segment::vis(v, rng.random_range(1..=40)));
    }
    for (kind, lo, hi) in [
        (SegmentKind::Prop, 0, 2),
        (SegmentKind::Txt, 1, 8),
        (SegmentKind::Act, 0, 6),
    ] {
        let n = rng.random_range(lo..=hi);
        if n > 0 {
            segs.push(Segment::new(kind, n));
        }
    }
    if rng.random_bool(0.7) {
        segs.push(Segment::new(SegmentKind::Eos, 1));
    }
    let rows: usize = segs.iter().map(|s| s.len).sum();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-2.0f32..2.0))
        .collect();
    EmbeddingMatrix::new(cols, data, segs).expect("valid layout")
}

fn pruned_integrity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5E9);
    let mut checked = 0;
    for _ in 0..1000 {
        let heads = rng.random_range(1..=4);
        let head_dim = rng.random_range(1..=4);
        let cols = heads * head_dim;
        let m = random_matrix(&mut rng, cols);
        let mut bytes = Vec::new();
        write_embeddings(&mut bytes, &m).map_err(|e| e.to_string())?;
        let m = read_embeddings(bytes.as_slice()).map_err(|e| e.to_string())?;
        let w = ProjectionWeights::new(
            (0..cols * cols)
                .map(|_| rng.random_range(-1.0f32..1.0))
                .collect(),
            (0..cols * cols)
                .map(|_| rng.random_range(-1.0f32..1.0))
                .collect(),
            heads,
            head_dim,
        )
        .map_err(|e| e.to_string())?;
        // Weights proportional to view sizes and rho >= 1/L keep every quota feasible.
        let lens = m.view_lengths();
        let l_vis = m.vis_len();
        let alpha: Vec<f64> = lens.iter().map(|&n| n as f64 / l_vis as f64).collect();
        let rho = rng.random_range(1.0 / l_vis as f64..=1.0);
        let out = prune_pipeline(&m, &w, rho, &alpha)
            .map_err(|e| format!("rho={rho} alpha={alpha:?}: {e}"))?;
        let p = &out.pruned;
        let k = out.decision.kept_count();
        check(p.rows() == m.rows() - l_vis + k, || {
            format!("S' = {} expected {}", p.rows(), m.rows() - l_vis + k)
        })?;

        // Walk both sequences segment by segment.
        let src: Vec<_> = m.segment_offsets().map(|(s, o)| (*s, o)).collect();
        let dst: Vec<_> = p.segment_offsets().map(|(s, o)| (*s, o)).collect();
        check(src.len() == dst.len(), || "segment count changed".into())?;
        let mut view = 0;
        for ((ss, so), (ds, dof)) in src.iter().zip(&dst) {
            check(ss.kind == ds.kind && ss.view == ds.view, || {
                "segment order changed".into()
            })?;
            if ss.kind == SegmentKind::Vis {
                let kept = &out.decision.kept[view];
                check(ds.len == kept.len(), || "visual segment length".into())?;
                for (j, &i) in kept.iter().enumerate() {
                    let same = m
                        .row(so + i)
                        .iter()
                        .zip(p.row(dof + j))
                        .all(|(a, b)| a.to_bits() == b.to_bits());
                    check(same, || format!("row {i} of view {view} altered"))?;
                }
                view += 1;
            } else {
                check(ss.len == ds.len, || "non-visual segment resized".into())?;
                for r in 0..ss.len {
                    let same = m
                        .row(so + r)
                        .iter()
                        .zip(p.row(dof + r))
                        .all(|(a, b)| a.to_bits() == b.to_bits());
                    check(same, || format!("{:?} row {r} altered", ss.kind))?;
                }
            }
        }
        let again = assemble_pruned(&m, &out.decision).map_err(|e| e.to_string())?;
        check(&again == p, || "assemble_pruned not deterministic".into())?;
        checked += 1;
    }
    Ok(format!(
        "{checked} random files round-tripped and pruned with bit-equal rows"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("fk-oracle-equivalence", fk_oracle),
        ("gate-dual-implementation", gate_equivalence),
        ("gate-structural-invariants", gate_invariants),
        ("topk-oracle", topk_oracle),
        ("flops-identities", flops_identities),
        ("reference-cost-calibration", calibration),
        ("stats-bounds", stats_bounds),
        (
            "hypergeometric-vs-monte-carlo",
            hypergeometric_vs_monte_carlo,
        ),
        ("end-to-end-determinism", end_to_end),
        ("pruned-sequence-integrity", pruned_integrity),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        match f() {
            Ok(detail) => println!("[PASS] {name}: {detail} ({:.2?})", start.elapsed()),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {name}: {why} ({:.2?})", start.elapsed());
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
