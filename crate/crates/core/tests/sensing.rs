use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use spinbed_core::config::load_config;
use spinbed_core::models::oracle::ac_prob_zero_exact;
use spinbed_core::models::{AcFieldParams, AcModel, AcModelConfig, LikelihoodModel, ParamGroup, SensingModel};
use spinbed_core::orchestrator::run;
use spinbed_core::rng::{derive_seed, rng_for, Stream};
use spinbed_core::sim::{run_shot, shot_histogram};
use spinbed_core::smc::{resample_liu_west, ParticleCloud, ResamplerConfig};
use spinbed_core::{ControlGrid, GroundTruth, Result};

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            r[k] = 0.5 * (i + j) as f64;
        }
        i = j + 1;
    }
    r
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn reference_sample_run() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference_run.toml");
    let cfg = load_config(&path).unwrap();
    let SensingModel::Nuclear(model) = &cfg.model else { panic!("nuclear config expected") };
    let trace = run(model, &cfg.grid, &cfg.truth, &cfg.run).unwrap();
    assert_eq!(trace.n_shot(), 1050);

    let mean = trace.final_checkpoint().summary.mean.clone();
    let ms: f64 = cfg
        .grid
        .taus()
        .iter()
        .map(|&t| (model.prob_zero(&mean, t) - model.prob_zero(&cfg.truth.params, t)).powi(2))
        .sum::<f64>()
        / cfg.grid.len() as f64;
    assert!(ms.sqrt() < 0.05, "population curve gap {}", ms.sqrt());

    // Shots pile up where the read-out most often departs from |0>.
    let hist = shot_histogram(&trace.records, &cfg.grid).unwrap();
    let counts: Vec<f64> = hist.iter().map(|b| b.count as f64).collect();
    let ones: Vec<f64> = hist.iter().map(|b| b.mean_outcome).collect();
    let rho = spearman(&counts, &ones);
    assert!(rho > 0.0, "rank correlation {rho}");

    let per_shot = trace.probe_time_us / trace.n_shot() as f64;
    assert!((189.0..=351.0).contains(&per_shot), "mean probe time per shot {per_shot} us");
}

#[test]
fn field_simulator_matches_phase_average() {
    let cfg = AcModelConfig { t2: 170.0, ..AcModelConfig::default() };
    let model = AcModel::new(cfg).unwrap();
    let grid = ControlGrid::uniform(0.51, 7.0, 0.01).unwrap();
    let params = AcFieldParams { omega: 3.1, b: 0.1 * 3.1 / cfg.gamma };
    let truth = GroundTruth::ac(params, 11);
    for tau in [0.8, 2.37, 5.5] {
        let n = 100_000;
        let zeros = (0..n).filter(|&i| run_shot(&model, &truth, &grid, tau, i, 0.0).unwrap().outcome == 0).count();
        let p = ac_prob_zero_exact(params, &cfg, tau);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!(
            (zeros as f64 / n as f64 - p).abs() < 3.0 * se + 1e-12,
            "tau {tau}: {} vs {p}",
            zeros as f64 / n as f64
        );
    }
}

/// Logistic read-out over two parameters in the unit square; the control mixes them.
struct Toy;

impl Toy {
    fn p(x: &[f64], tau: f64) -> f64 {
        let z = 6.0 * (tau * (x[0] - 0.5) + (1.0 - tau) * (x[1] - 0.5));
        0.05 + 0.9 / (1.0 + (-z).exp())
    }
}

impl LikelihoodModel for Toy {
    type GridCache = Vec<f64>;

    fn dim(&self) -> usize {
        2
    }

    fn param_names(&self) -> Vec<String> {
        vec!["x".into(), "y".into()]
    }

    fn param_groups(&self) -> Vec<ParamGroup> {
        vec![ParamGroup { name: "xy".into(), indices: vec![0, 1] }]
    }

    fn prob_zero(&self, params: &[f64], tau: f64) -> f64 {
        Toy::p(params, tau)
    }

    fn grid_cache(&self, grid: &ControlGrid) -> Vec<f64> {
        grid.taus().to_vec()
    }

    fn prob_zero_row(&self, cache: &Vec<f64>, params: &[f64], out: &mut [f64]) {
        for (o, t) in out.iter_mut().zip(cache) {
            *o = Toy::p(params, *t);
        }
    }

    fn clamp(&self, params: &mut [f64]) {
        params.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    fn contains(&self, params: &[f64]) -> bool {
        params.iter().all(|v| (0.0..=1.0).contains(v))
    }

    fn prior_cloud(&self, n_p: usize, seed: u64) -> Result<ParticleCloud> {
        ParticleCloud::init_uniform(&[[0.0, 1.0], [0.0, 1.0]], n_p, seed)
    }

    fn probe_time(&self, tau: f64) -> f64 {
        tau
    }

    fn sample_zero(&self, truth: &[f64], tau: f64, rng: &mut ChaCha8Rng) -> bool {
        rng.random::<f64>() < Toy::p(truth, tau)
    }
}

#[test]
fn particle_posterior_matches_brute_force_grid() {
    let truth = [0.3, 0.7];
    let mut rng = rng_for(5, Stream::Shot, 0);
    let data: Vec<(f64, bool)> = (0..200)
        .map(|_| {
            let tau = rng.random::<f64>();
            (tau, Toy.sample_zero(&truth, tau, &mut rng))
        })
        .collect();
    let lik = |x: &[f64], (tau, zero): (f64, bool)| {
        let p = Toy::p(x, tau);
        if zero {
            p
        } else {
            1.0 - p
        }
    };

    let n = 50;
    let mut log_post = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let x = [(i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64];
            log_post.push((x, data.iter().map(|&d| lik(&x, d).ln()).sum::<f64>()));
        }
    }
    let top = log_post.iter().map(|(_, l)| *l).fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_post.iter().map(|(_, l)| (l - top).exp()).collect();
    let z: f64 = w.iter().sum();
    let mut mean = [0.0; 2];
    let mut second = [0.0; 2];
    for ((x, _), wk) in log_post.iter().zip(&w) {
        for d in 0..2 {
            mean[d] += wk * x[d] / z;
            second[d] += wk * x[d] * x[d] / z;
        }
    }
    let sd: Vec<f64> = (0..2).map(|d| (second[d] - mean[d] * mean[d]).sqrt()).collect();

    let resampler = ResamplerConfig { remap: false, ..ResamplerConfig::default() };
    let mut cloud = Toy.prior_cloud(4000, 9).unwrap();
    let mut l = vec![0.0; cloud.len()];
    for (i, &(tau, zero)) in data.iter().enumerate() {
        for (k, o) in l.iter_mut().enumerate() {
            *o = lik(cloud.location(k), (tau, zero));
        }
        cloud.bayes_update(&l).unwrap();
        if resampler.should_resample(&cloud) {
            cloud =
                resample_liu_west(&cloud, &Toy, &resampler, derive_seed(9, Stream::Resample, i as u64)).unwrap().cloud;
        }
    }
    let smc = cloud.mean();
    for d in 0..2 {
        assert!((smc[d] - mean[d]).abs() < 3.0 * sd[d], "dim {d}: {} vs {} (sd {})", smc[d], mean[d], sd[d]);
    }
}
