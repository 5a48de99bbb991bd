//! Acceptance criteria, one PASS/FAIL line each, run one after another so
//! the runtime limits are measured on an otherwise idle process.
//!
//! Select criteria by number: `cargo test --release --test acceptance -- 1 6 11`.
//! Artifacts (ring sample grids, grid reports) land under
//! `target/tmp/acceptance/`.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;

use eblab::config::ExperimentConfig;
use eblab::data::{
    encode_idx_images, encode_idx_labels, load_idx, load_named, parse_idx_images, parse_idx_labels, pixel_to_unit,
    read_pgm, unit_to_pixel, write_sample_grid, Dataset,
};
use eblab::equilibrium::*;
use eblab::harness::{
    load_scores, regenerate_histograms, run_grid, search_margin, seed_override, summarize, Evaluator, GridSpec,
    MarginLadder, SEED_ENV,
};
use eblab::metrics::{modified_inception_score, train_gated_classifier, ClassifierSpec, ProxyClassifier, ACCURACY_GATE};
use eblab::nets::{AutoEncoderDiscriminator, GeneratorNet, LogisticDiscriminator, Network, Pass};
use eblab::objectives::*;
use eblab::rng::stream;
use eblab::tensor::{grad_check, BatchNormMode, Graph, Tensor, Var};
use eblab::trainer::{train_run, RunStatus};

type Verdict = eblab::Result<(bool, String)>;

/// Lazily trained proxy classifier shared by the digit criteria.
#[derive(Default)]
struct Shared {
    classifier: Option<ProxyClassifier>,
    digits: Option<Dataset>,
}

impl Shared {
    fn digits(&mut self) -> eblab::Result<Dataset> {
        if self.digits.is_none() {
            self.digits = Some(load_named("digits", 10_000, 0)?);
        }
        Ok(self.digits.clone().unwrap())
    }

    fn classifier(&mut self) -> eblab::Result<ProxyClassifier> {
        if self.classifier.is_none() {
            let (clf, acc) = train_gated_classifier(&self.digits()?, &ClassifierSpec::default())?;
            if acc < ACCURACY_GATE {
                return Err(eblab::Error::InvalidArgument(format!("proxy classifier accuracy {acc} below gate")));
            }
            self.classifier = Some(clf);
        }
        Ok(self.classifier.clone().unwrap())
    }
}

fn artifacts() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

// ---------------------------------------------------------------- theory

fn hinge_minimizer(_: &mut Shared) -> Verdict {
    const STEP: f64 = 1e-3;
    const TOL: f64 = 1e-9;
    let mut rng = stream(1, 0);
    let mut worst = 0.0f64;
    for m in [1.0, 10.0] {
        let n = (2.0 * m / STEP).round() as usize;
        for _ in 0..1000 {
            let (a, b) = (rng.random_range(0.0..=10.0), rng.random_range(0.0..=10.0));
            let got = phi_argmin(a, b, m)?;
            let brute = (0..=n)
                .map(|k| {
                    let y = k as f64 / 1000.0;
                    a * y + b * (m - y).max(0.0)
                })
                .fold(f64::INFINITY, f64::min);
            worst = worst.max((got.value - brute).abs());
        }
    }
    Ok((worst <= TOL, format!("max |phi_min - grid_min| = {worst:.3e} (tol {TOL:e})")))
}

fn pointwise_equivalence(_: &mut Shared) -> Verdict {
    let mut rng = stream(2, 0);
    let (mut ok, mut equal_pairs) = (0usize, 0usize);
    const N: usize = 100_000;
    for i in 0..N {
        let k = rng.random_range(1..=MAX_CHECK_POINTS);
        let p = DiscreteDensity::random(k, 0.25, &mut rng);
        let q = if i % 10 == 0 {
            equal_pairs += 1;
            p.clone()
        } else {
            DiscreteDensity::random(k, 0.25, &mut rng)
        };
        ok += lemma2_check(&p, &q)?.equivalent as usize;
    }
    Ok((ok == N, format!("{ok}/{N} pairs equivalent ({equal_pairs} forced equal)")))
}

fn brute_force_minimum(_: &mut Shared) -> Verdict {
    const M: f64 = 10.0;
    const TOL: f64 = 1e-12;
    let step = M / 50.0;
    let mut rng = stream(3, 0);
    let mut worst_equal = 0.0f64;
    for _ in 0..200 {
        let k = rng.random_range(1..=8);
        let p = DiscreteDensity::random(k, 0.2, &mut rng);
        let bf = brute_force_min_v(&p, &p, M, step)?;
        worst_equal = worst_equal.max((bf.v_min - M).abs());
    }
    let (mut strict, mut unequal, mut worst_br) = (0, 0, 0.0f64);
    while unequal < 200 {
        let k = rng.random_range(2..=8);
        let p = DiscreteDensity::random(k, 0.2, &mut rng);
        let q = DiscreteDensity::random(k, 0.2, &mut rng);
        if p == q {
            continue;
        }
        unequal += 1;
        let bf = brute_force_min_v(&p, &q, M, step)?;
        strict += (bf.v_min < M) as usize;
        let v_br = discrete_v(&p, &q, &best_response_d(&p, &q, M)?, M)?;
        worst_br = worst_br.max((v_br - bf.v_min).abs());
    }
    let pass = worst_equal <= TOL && strict == 200 && worst_br <= step;
    Ok((
        pass,
        format!(
            "equal: max |minV - m| = {worst_equal:.1e}; unequal: {strict}/200 strictly below m, \
             max |V(best response) - brute| = {worst_br:.1e} (grid step {step})"
        ),
    ))
}

fn constant_gamma(_: &mut Shared) -> Verdict {
    const M: f64 = 10.0;
    const TOL: f64 = 1e-12;
    let mut rng = stream(4, 0);
    let (mut certified, mut worst_v, mut worst_u_shift) = (0, 0.0f64, 0.0f64);
    const DENSITIES: usize = 50;
    for _ in 0..DENSITIES {
        let k = rng.random_range(1..=MAX_CHECK_POINTS);
        let p = DiscreteDensity::random(k, 0.0, &mut rng);
        let perturbations: Vec<DiscreteDensity> = (0..100).map(|_| DiscreteDensity::random(k, 0.3, &mut rng)).collect();
        let r = check_theorem2(&p, M, TOL, &perturbations)?;
        certified += r.certified as usize;
        for g in &r.gammas {
            worst_v = worst_v.max((g.v - M).abs());
            // Against a constant D every generator pays exactly γ.
            let d = DiscreteDiscriminator::constant(k, g.gamma)?;
            for q in &perturbations {
                worst_u_shift = worst_u_shift.max((discrete_u(q, &d)? - g.u).abs());
            }
        }
    }
    let pass = certified == DENSITIES && worst_v <= TOL && worst_u_shift <= TOL;
    Ok((
        pass,
        format!(
            "{certified}/{DENSITIES} densities certified over 11 gammas; max |V - m| = {worst_v:.1e}, \
             max |U(q) - U(p)| over 100 perturbations = {worst_u_shift:.1e}"
        ),
    ))
}

// ------------------------------------------------------------- gradients

const H: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-5;

fn randn(shape: &[usize], std: f64, seed: u64) -> Tensor {
    Tensor::randn(shape, std, &mut stream(seed, 0))
}

/// Keeps entries at least `gap` from zero so no kink is straddled.
fn off_kink(t: Tensor, gap: f64) -> Tensor {
    let data = t.data().iter().map(|&v| if v.abs() < gap { v + gap * v.signum().max(0.5) } else { v }).collect();
    Tensor::new(t.shape().to_vec(), data).unwrap()
}

fn weighted(g: &mut Graph, y: Var, seed: u64) -> eblab::Result<Var> {
    let w = g.constant(randn(g.value(y).shape(), 1.0, seed + 1000));
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn spread_params<N: Network>(net: &mut N, seed: u64) {
    for (i, p) in net.params_mut().into_iter().enumerate() {
        *p = randn(p.shape(), 0.5, seed * 100 + i as u64);
    }
}

fn train_pass(rng: &mut eblab::rng::LabRng) -> Pass<'_> {
    Pass { training: true, rng }
}

fn gradient_suite(_: &mut Shared) -> Verdict {
    let mut results: Vec<(&str, f64)> = Vec::new();
    let mut check = |name: &'static str, params: &[Tensor], f: &dyn Fn(&mut Graph, &[Var]) -> eblab::Result<Var>| {
        let err = grad_check(f, params, H).unwrap_or(f64::INFINITY);
        results.push((name, err));
    };

    let a = randn(&[4, 3], 1.0, 1);
    let b = randn(&[3, 5], 1.0, 2);
    let bias = randn(&[5], 1.0, 3);
    check("matmul+add_bias", &[a.clone(), b.clone(), bias.clone()], &|g, p| {
        let y = g.matmul(p[0], p[1])?;
        let y = g.add_bias(y, p[2])?;
        weighted(g, y, 1)
    });
    check("transpose", &[a.clone()], &|g, p| {
        let t = g.transpose(p[0])?;
        weighted(g, t, 2)
    });
    let x = off_kink(randn(&[3, 4], 1.0, 4), 1e-3);
    let y = randn(&[3, 4], 1.0, 5);
    check("add/sub/mul", &[x.clone(), y.clone()], &|g, p| {
        let s = g.add(p[0], p[1])?;
        let d = g.sub(p[0], p[1])?;
        let m = g.mul(s, d)?;
        weighted(g, m, 3)
    });
    let pos = Tensor::new(vec![3, 4], y.data().iter().map(|v| v.abs() + 0.5).collect())?;
    check("div", &[x.clone(), pos.clone()], &|g, p| {
        let q = g.div(p[0], p[1])?;
        weighted(g, q, 4)
    });
    check("scale/add_scalar", &[x.clone()], &|g, p| {
        let s = g.scale(p[0], -1.7)?;
        let s = g.add_scalar(s, 0.3)?;
        weighted(g, s, 5)
    });
    check("relu", &[x.clone()], &|g, p| {
        let r = g.relu(p[0])?;
        weighted(g, r, 6)
    });
    check("tanh", &[x.clone()], &|g, p| {
        let r = g.tanh(p[0])?;
        weighted(g, r, 7)
    });
    check("sigmoid", &[x.clone()], &|g, p| {
        let r = g.sigmoid(p[0])?;
        weighted(g, r, 8)
    });
    check("ln", &[pos.clone()], &|g, p| {
        let r = g.ln(p[0])?;
        weighted(g, r, 9)
    });
    // Interior points only: values stay clear of the clamp bounds.
    let inner = Tensor::new(vec![3, 4], x.data().iter().map(|v| v.tanh() * 0.8).collect())?;
    check("clamp", &[inner], &|g, p| {
        let r = g.clamp(p[0], -0.9, 0.9)?;
        weighted(g, r, 10)
    });
    check("dropout (fixed mask)", &[x.clone()], &|g, p| {
        let r = g.dropout(p[0], 0.4, true, &mut stream(11, 0))?;
        weighted(g, r, 11)
    });
    let bn_x = randn(&[6, 3], 2.0, 12);
    let beta = randn(&[3], 1.0, 13);
    let gamma = randn(&[3], 1.0, 14);
    check("batchnorm (train)", &[bn_x.clone(), beta.clone(), gamma.clone()], &|g, p| {
        let (y, _) = g.batchnorm(p[0], p[1], Some(p[2]), BatchNormMode::Training { eps: 1e-5 })?;
        weighted(g, y, 12)
    });
    check("batchnorm (inference)", &[bn_x.clone(), beta.clone()], &|g, p| {
        let mode = BatchNormMode::Inference {
            mean: &[0.1, -0.3, 0.5],
            var: &[1.5, 0.7, 2.0],
            eps: 1e-5,
        };
        let (y, _) = g.batchnorm(p[0], p[1], None, mode)?;
        weighted(g, y, 13)
    });
    check("row norms/div_rows", &[x.clone(), y.clone()], &|g, p| {
        let d = g.sub(p[0], p[1])?;
        let n = g.euclidean_norm_rowwise(d)?;
        let s = g.squared_l2_rowwise(d)?;
        let q = g.div_rows(p[0], n)?;
        let a = weighted(g, q, 14)?;
        let b = weighted(g, s, 15)?;
        g.add(a, b)
    });
    check("gram/diagonal/zero_diagonal/reshape", &[a.clone()], &|g, p| {
        let t = g.transpose(p[0])?;
        let gram = g.matmul(p[0], t)?;
        let off = g.zero_diagonal(gram)?;
        let diag = g.diagonal(gram)?;
        let col = g.reshape(diag, &[4, 1])?;
        let o = weighted(g, off, 16)?;
        let c = weighted(g, col, 17)?;
        g.add(o, c)
    });
    check("concat/log_softmax/sum/mean", &[a.clone(), randn(&[2, 3], 1.0, 18)], &|g, p| {
        let c = g.concat(&[p[0], p[1]])?;
        let l = g.log_softmax(c)?;
        let w = weighted(g, l, 18)?;
        let m = g.mean(l)?;
        g.add(w, m)
    });

    // Composite objectives through small networks (< 1e3 parameters each).
    let (latent, dim, n) = (3, 4, 5);
    let mut ae = AutoEncoderDiscriminator::new(2, 1, 8, dim, false)?;
    spread_params(&mut ae, 20);
    let mut gen = GeneratorNet::new(2, 8, latent, dim)?;
    spread_params(&mut gen, 21);
    let mut logit = LogisticDiscriminator::new(2, 8, dim, false)?;
    spread_params(&mut logit, 22);
    let sizes = [ae.params().iter().map(|p| p.numel()).sum::<usize>(), gen.params().iter().map(|p| p.numel()).sum()];
    assert!(sizes.iter().all(|&s| s <= 1000), "{sizes:?}");
    let real = randn(&[n, dim], 0.5, 23);
    let fake = randn(&[n, dim], 0.5, 24);
    let z = randn(&[n, latent], 1.0, 25);

    let energies = |x: &Tensor| -> eblab::Result<Vec<f64>> {
        let mut g = Graph::new();
        let ps: Vec<Var> = ae.params().into_iter().map(|p| g.constant(p.clone())).collect();
        let xv = g.constant(x.clone());
        let out = ae.clone().forward(&mut g, &ps, xv, &mut train_pass(&mut stream(0, 0)))?;
        Ok(g.value(out.energies).data().to_vec())
    };
    let e_fake = energies(&fake)?;
    // Margin set between fake energies, away from every hinge kink.
    let mut sorted = e_fake.clone();
    sorted.sort_by(f64::total_cmp);
    let margin = 0.5 * (sorted[1] + sorted[2]);
    let kink_gap = e_fake.iter().map(|e| (e - margin).abs()).fold(f64::INFINITY, f64::min);

    check("EBGAN discriminator loss", &ae.params().into_iter().cloned().collect::<Vec<_>>(), &|g, p| {
        let mut d = ae.clone();
        let r = g.constant(real.clone());
        let f = g.constant(fake.clone());
        let er = d.forward(g, p, r, &mut train_pass(&mut stream(0, 0)))?.energies;
        let ef = d.forward(g, p, f, &mut train_pass(&mut stream(0, 0)))?.energies;
        ebgan_d_loss(g, er, ef, margin)
    });
    check("EBGAN generator loss + 0.1·PT", &gen.params().into_iter().cloned().collect::<Vec<_>>(), &|g, p| {
        let mut net = gen.clone();
        let mut d = ae.clone();
        let zv = g.constant(z.clone());
        let x = net.forward(g, p, zv, &mut train_pass(&mut stream(0, 0)))?;
        let dp: Vec<Var> = ae.params().into_iter().map(|t| g.constant(t.clone())).collect();
        let out = d.forward(g, &dp, x, &mut train_pass(&mut stream(0, 0)))?;
        let lg = ebgan_g_loss(g, out.energies)?;
        let pt = pull_away_term(g, out.representations, PT_EPS)?;
        let pt = g.scale(pt, 0.1)?;
        g.add(lg, pt)
    });
    check("GAN discriminator loss", &logit.params().into_iter().cloned().collect::<Vec<_>>(), &|g, p| {
        let mut d = logit.clone();
        let r = g.constant(real.clone());
        let f = g.constant(fake.clone());
        let pr = d.forward(g, p, r, &mut train_pass(&mut stream(0, 0)))?;
        let pf = d.forward(g, p, f, &mut train_pass(&mut stream(0, 0)))?;
        gan_d_loss(g, pr, pf)
    });
    check("GAN generator loss", &gen.params().into_iter().cloned().collect::<Vec<_>>(), &|g, p| {
        let mut net = gen.clone();
        let mut d = logit.clone();
        let zv = g.constant(z.clone());
        let x = net.forward(g, p, zv, &mut train_pass(&mut stream(0, 0)))?;
        let dp: Vec<Var> = logit.params().into_iter().map(|t| g.constant(t.clone())).collect();
        let pf = d.forward(g, &dp, x, &mut train_pass(&mut stream(0, 0)))?;
        gan_g_loss(g, pf)
    });

    let worst = results.iter().cloned().fold(("", 0.0f64), |w, r| if r.1 > w.1 { r } else { w });
    let failing: Vec<String> =
        results.iter().filter(|r| !(r.1 < GRAD_TOL)).map(|(n, e)| format!("{n} ({e:.1e})")).collect();
    Ok((
        failing.is_empty() && kink_gap > 1e-4,
        format!(
            "{} checks, worst {} at {:.2e} (tol {GRAD_TOL:e}, h {H:e}); hinge kink gap {kink_gap:.1e}{}",
            results.len(),
            worst.0,
            worst.1,
            if failing.is_empty() { String::new() } else { format!("; failing: {}", failing.join(", ")) }
        ),
    ))
}

// ---------------------------------------------------------------- PT, I′

fn pt_properties(_: &mut Shared) -> Verdict {
    let mut rng = stream(6, 0);
    let mut out_of_range = 0;
    let mut worst_scale = 0.0f64;
    for _ in 0..10_000 {
        let n = rng.random_range(2..=8);
        let d = rng.random_range(1..=6);
        let s = Tensor::randn(&[n, d], 1.0, &mut rng);
        let v = pull_away_value(&s)?;
        out_of_range += !(0.0..=1.0).contains(&v) as usize;
        let scaled: Vec<f64> = (0..n)
            .flat_map(|i| {
                let c = rng.random_range(0.01..100.0);
                s.row(i).iter().map(move |x| x * c).collect::<Vec<_>>()
            })
            .collect();
        let w = pull_away_value(&Tensor::new(vec![n, d], scaled)?)?;
        worst_scale = worst_scale.max((v - w).abs());
    }
    let ortho = Tensor::from_rows(&[vec![2.5, 0.0, 0.0], vec![0.0, -0.3, 0.0], vec![0.0, 0.0, 7.0]])?;
    let v_ortho = pull_away_value(&ortho)?;
    let mut identical_ok = true;
    for n in 2..=12 {
        let row = randn(&[5], 1.0, n as u64).into_data();
        let same = Tensor::from_rows(&vec![row; n])?;
        identical_ok &= pull_away_value(&same)? == 1.0;
    }
    let three = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]])?;
    let v_three = pull_away_value(&three)?;
    let pass = out_of_range == 0 && worst_scale <= 1e-12 && v_ortho == 0.0 && identical_ok && v_three == 1.0 / 3.0;
    Ok((
        pass,
        format!(
            "{out_of_range} of 10^4 outside [0,1]; scaling drift {worst_scale:.1e}; orthogonal {v_ortho}; \
             identical rows exact: {identical_ok}; three-row case {v_three}"
        ),
    ))
}

fn inception_score(_: &mut Shared) -> Verdict {
    let collapsed = Tensor::from_rows(&vec![vec![0.05, 0.9, 0.05]; 50])?;
    let i_collapsed = modified_inception_score(&collapsed)?;
    let two = modified_inception_score(&Tensor::from_rows(&[vec![0.9, 0.1], vec![0.1, 0.9]])?)?;
    let mut rng = stream(7, 0);
    let rows: Vec<Vec<f64>> = (0..200)
        .map(|_| {
            let w: Vec<f64> = (0..10).map(|_| rng.random::<f64>().powi(3)).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|v| v / s).collect()
        })
        .collect();
    let forward = modified_inception_score(&Tensor::from_rows(&rows)?)?;
    let mut reversed = rows.clone();
    reversed.reverse();
    let backward = modified_inception_score(&Tensor::from_rows(&reversed)?)?;
    let pass = i_collapsed.abs() <= 1e-12 && (two - 0.5108).abs() <= 1e-4 && forward.to_bits() == backward.to_bits();
    Ok((
        pass,
        format!("collapsed {i_collapsed:.1e}; two-sample {two:.6}; order invariance bit-exact: {}", forward == backward),
    ))
}

// -------------------------------------------------------------- training

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn ring_toy(_: &mut Shared) -> Verdict {
    const SEEDS: u64 = 5;
    const TAIL: usize = 100;
    let data = load_named("ring", 10_000, 0)?;
    let base = ExperimentConfig {
        dataset: "ring".into(),
        lambda_pt: 0.1,
        total_steps: 20_000,
        batch_size: 64,
        ..ExperimentConfig::default()
    };
    let evaluator = Evaluator::new("ring", None);
    // The estimate seeds a ladder of margins; pilots on seeds disjoint from
    // the scored ones pick the rung.
    let choice = search_margin(&base, &data, &MarginLadder::default(), &mut |state, cfg| {
        Ok(evaluator.evaluate(&mut state.generator, cfg)?.1.unwrap_or(0.0))
    })?;
    let m = choice.chosen;
    let dir = artifacts().join("ring");
    let (mut e_real, mut coverage) = (Vec::new(), Vec::new());
    let mut lines = Vec::new();
    for seed in 0..SEEDS {
        let cfg = ExperimentConfig {
            seed,
            margin: MarginSchedule::Constant { m0: m },
            ..base.clone()
        };
        let mut tail: Vec<f64> = Vec::new();
        let mut out = train_run(&cfg, &data, Some(&dir.join(format!("seed-{seed}"))), &mut |s| {
            if s.step + TAIL as u64 >= cfg.total_steps {
                tail.push(s.e_real);
            }
        })?;
        let cov = match out.record.status {
            RunStatus::Completed => evaluator.evaluate(&mut out.state.generator, &cfg)?.1.unwrap_or(0.0),
            RunStatus::Failed => 0.0,
        };
        let e = if tail.is_empty() { f64::INFINITY } else { tail.iter().sum::<f64>() / tail.len() as f64 };
        lines.push(format!("seed {seed}: e_real {e:.4}, coverage {cov}"));
        e_real.push(e);
        coverage.push(cov);
    }
    std::fs::write(dir.join("summary.txt"), format!("m = {m}\n{}\n", lines.join("\n")))?;
    let (med_e, med_c) = (median(&mut e_real), median(&mut coverage));
    let ladder: Vec<String> = choice.candidates.iter().map(|c| format!("{:.3}:{}", c.m, c.score)).collect();
    Ok((
        med_e < m && med_c >= 5.0,
        format!(
            "estimate {:.4}, ladder [{}] -> m {m:.4}; median e_real {med_e:.4} (< m), median coverage {med_c}/8 (>= 5)",
            choice.estimate,
            ladder.join(" ")
        ),
    ))
}

fn parallelism() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn mini_grid(shared: &mut Shared) -> Verdict {
    let data = shared.digits()?;
    let spec = GridSpec::parse(
        "grid_id = minigrid\nseeds = 5\nframework = ebgan,gan\nnLayer = 2,3\nsizeG = 64,128\nsizeD = 64,128\n\
         grid = desk\ndataset = digits\ntotal_steps = 3000\n",
    )?;
    let run = run_grid(&spec, &data, parallelism(), &artifacts(), &Evaluator::new("digits", Some(shared.classifier()?)))?;
    let rows = load_scores(&run.dir.join("scores.csv"))?;
    let s = summarize(&rows);
    let find = |t: &str| s.iter().find(|x| x.tag == t).cloned();
    let (Some(e), Some(g)) = (find("ebgan"), find("gan")) else {
        return Ok((false, "missing a framework in the summary".into()));
    };
    let pass = e.runs == 40 && g.runs == 40 && e.above_pooled_median > g.above_pooled_median && e.iqr() <= g.iqr()
        && run.dir.join("comparison.csv").exists();
    Ok((
        pass,
        format!(
            "above pooled median: ebgan {:.3} vs gan {:.3}; IQR ebgan {:.3} vs gan {:.3}; failed {}/{}",
            e.above_pooled_median,
            g.above_pooled_median,
            e.iqr(),
            g.iqr(),
            e.failed,
            g.failed
        ),
    ))
}

fn margin_sweep(shared: &mut Shared) -> Verdict {
    let data = shared.digits()?;
    let spec = GridSpec::parse(
        "grid_id = margin-sweep\nmargin = 1,2,4,6,8,12,16,32\ndataset = digits\ntotal_steps = 1000\n",
    )?;
    let run = run_grid(&spec, &data, parallelism(), &artifacts(), &Evaluator::new("digits", Some(shared.classifier()?)))?;
    let rows = load_scores(&run.dir.join("scores.csv"))?;
    let grids = run.points.iter().filter(|p| run.dir.join(&p.run_id).join("samples_final.pgm").exists()).count();
    let margins: Vec<&str> = rows.iter().map(|r| r.field("margin")).collect();

    const HORIZON: u64 = 1000;
    let schedule = MarginSchedule::Linear {
        m0: 16.0,
        decay_end_step: HORIZON,
    };
    let at = [0, HORIZON / 2, HORIZON].map(|t| margin_at(&schedule, t));
    let cfg = ExperimentConfig {
        margin: schedule,
        total_steps: HORIZON,
        n_layer_g: 2,
        n_layer_d: 2,
        size_g: 32,
        size_d: 32,
        ..ExperimentConfig::default()
    };
    let mut logged = Vec::new();
    train_run(&cfg, &data, None, &mut |s| logged.push((s.step, s.margin)))?;
    let trained_matches = logged.iter().all(|&(t, m)| m.to_bits() == margin_at(&schedule, t).to_bits());
    let pass = rows.len() == 8
        && grids == 8
        && margins == ["1", "2", "4", "6", "8", "12", "16", "32"]
        && at == [16.0, 8.0, 0.0]
        && trained_matches
        && logged[(HORIZON / 2) as usize].1 == 8.0;
    Ok((
        pass,
        format!(
            "{} summary rows, {grids} sample grids, margins {margins:?}; decay at 0/50%/100% = {at:?}; \
             training log agrees with margin_at: {trained_matches}",
            rows.len()
        ),
    ))
}

// ---------------------------------------------------------- infrastructure

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn infrastructure(shared: &mut Shared) -> Verdict {
    let mut notes = Vec::new();
    // IDX fixture: parse and re-encode byte for byte.
    let img_bytes = std::fs::read(fixture("tiny-images.idx3"))?;
    let lab_bytes = std::fs::read(fixture("tiny-labels.idx1"))?;
    let (rows, cols, px) = parse_idx_images(&img_bytes)?;
    let labels = parse_idx_labels(&lab_bytes)?;
    let idx_exact = encode_idx_images(rows, cols, &px) == img_bytes && encode_idx_labels(&labels) == lab_bytes;
    let ds = load_idx(&fixture("tiny-images.idx3"), &fixture("tiny-labels.idx1"))?;
    let via_unit: Vec<u8> = ds.samples().data().iter().map(|&v| unit_to_pixel(v)).collect();
    let idx_ok = idx_exact && via_unit == px && ds.labels().unwrap().iter().map(|&l| l as u8).eq(labels.iter().cloned());
    notes.push(format!("IDX byte-exact {idx_ok}"));

    // PGM: write a sample grid, read it back.
    let tmp = tempfile::tempdir()?;
    let samples = Tensor::new(vec![12, 64], (0..12 * 64).map(|i| ((i * 7919) % 2001) as f64 / 1000.0 - 1.0).collect())?;
    write_sample_grid(&samples, (8, 8), 3, 4, &tmp.path().join("g.pgm"))?;
    let img = read_pgm(&tmp.path().join("g.pgm"))?;
    let quantum = 2.0 / 255.0;
    let mut worst = 0.0f64;
    for t in 0..12 {
        let (tr, tc) = (t / 4, t % 4);
        for r in 0..8 {
            for c in 0..8 {
                let p = img.pixels[(tr * 8 + r) * img.width + tc * 8 + c];
                worst = worst.max((pixel_to_unit(p) - samples.row(t)[r * 8 + c]).abs());
            }
        }
    }
    let pgm_ok = worst <= quantum;
    notes.push(format!("PGM max error {worst:.4} (quantum {quantum:.4})"));

    // Grid rerun under a pinned seed, and histogram regeneration.
    let data = shared.digits()?;
    let clf = shared.classifier()?;
    std::env::set_var(SEED_ENV, "4242");
    let mut spec = GridSpec::parse(
        "grid_id = rerun\nseeds = 2\nframework = ebgan,gan\nsizeG = 32,64\nnLayer = 2\nsizeD = 32\n\
         dataset = digits\ntotal_steps = 200\n",
    )?;
    spec.base.seed = seed_override()?.expect("seed override is set");
    std::env::remove_var(SEED_ENV);
    let ev = Evaluator::new("digits", Some(clf));
    let a = run_grid(&spec, &data, parallelism(), &tmp.path().join("a"), &ev)?;
    let b = run_grid(&spec, &data, 1, &tmp.path().join("b"), &ev)?;
    let scores_a = std::fs::read(a.dir.join("scores.csv"))?;
    let rerun_ok = scores_a == std::fs::read(b.dir.join("scores.csv"))?
        && a.records.iter().all(|r| r.seed >= 4242 && r.i_prime.is_some());
    notes.push(format!("grid rerun bit-identical {rerun_ok}"));

    let regen = tmp.path().join("regen");
    std::fs::create_dir_all(&regen)?;
    regenerate_histograms(&load_scores(&a.dir.join("scores.csv"))?, &regen)?;
    let mut compared = 0;
    let mut regen_ok = true;
    for entry in std::fs::read_dir(&regen)? {
        let name = entry?.file_name();
        regen_ok &= std::fs::read(regen.join(&name))? == std::fs::read(a.dir.join(&name))?;
        compared += 1;
    }
    regen_ok &= compared >= 4;
    notes.push(format!("{compared} histogram files regenerated bit-identically {regen_ok}"));

    Ok((idx_ok && pgm_ok && rerun_ok && regen_ok, notes.join("; ")))
}

// ------------------------------------------------------------------ main

type Criterion = (u32, &'static str, u64, fn(&mut Shared) -> Verdict);

const CRITERIA: &[Criterion] = &[
    (1, "per-point hinge minimizer vs grid search", 10, hinge_minimizer),
    (2, "pointwise minimum equals m iff densities agree", 30, pointwise_equivalence),
    (3, "brute-force discriminator minimum", 120, brute_force_minimum),
    (4, "constant-gamma equilibria", 60, constant_gamma),
    (5, "gradient suite", 60, gradient_suite),
    (6, "pull-away term properties", 60, pt_properties),
    (7, "modified inception score", 60, inception_score),
    (8, "ring toy training", 15 * 60, ring_toy),
    (9, "mini grid: EBGAN vs GAN reliability", 60 * 60, mini_grid),
    (10, "margin sweep protocol", 30 * 60, margin_sweep),
    (11, "infrastructure exactness", 10 * 60, infrastructure),
];

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut shared = Shared::default();
    let mut failed = 0;
    for &(id, name, limit, run) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let verdict = run(&mut shared);
        let took = start.elapsed();
        let in_time = took <= Duration::from_secs(limit);
        let (pass, detail) = match verdict {
            Ok((pass, detail)) => (pass && in_time, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += !pass as usize;
        println!(
            "{} {id:>2} {name} [{:.1}s of {limit}s{}]: {detail}",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            if in_time { "" } else { ", over time" }
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
