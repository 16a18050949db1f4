// Scratch tool: times the ten-input benchmark at candidate budgets and
// reports per-cell errors against the reference table values. Not shipped.
use kbsa::depmodel::SubsetSpec;
use kbsa::estimators::{EstimatorConfig, IndexEngine};
use kbsa::kernels::KernelSpec;
use kbsa::marginals::{InputSpace, MarginalDistribution};
use kbsa::models::ModelSpec;
use kbsa::rng::StreamKey;
use kbsa::weights::{EffectiveWeight, WeightFunction};
use std::time::Instant;

const T1_PRINTED: [[f64; 10]; 6] = [
    [0.756, 0.556, 0.176, 0.136, 0.099, 0.092, 0.086, 0.082, 0.079, 0.076],
    [0.756, 0.555, 0.178, 0.148, 0.099, 0.091, 0.085, 0.082, 0.078, 0.076],
    [1.002, 0.747, 0.235, 0.188, 0.133, 0.124, 0.114, 0.114, 0.105, 0.100],
    [0.536, 0.328, 0.027, 0.016, 0.011, 0.009, 0.008, 0.007, 0.007, 0.006],
    [0.637, 0.436, 0.038, 0.026, 0.015, 0.012, 0.011, 0.011, 0.009, 0.010],
    [1.230, 0.844, 0.074, 0.048, 0.031, 0.027, 0.021, 0.024, 0.020, 0.018],
];
const T1_TOL: [f64; 6] = [0.03, 0.03, 0.04, 0.03, 0.03, 0.04];

const T2_PRINTED: [[f64; 10]; 6] = [
    [0.465, 0.388, 0.277, 0.229, 0.173, 0.165, 0.157, 0.319, 0.309, 0.301],
    [0.465, 0.388, 0.276, 0.229, 0.173, 0.164, 0.157, 0.320, 0.309, 0.300],
    [0.615, 0.530, 0.374, 0.303, 0.238, 0.224, 0.211, 0.428, 0.417, 0.402],
    [0.261, 0.190, 0.075, 0.058, 0.041, 0.040, 0.035, 0.121, 0.116, 0.113],
    [0.267, 0.197, 0.074, 0.059, 0.043, 0.041, 0.037, 0.123, 0.120, 0.116],
    [0.477, 0.441, 0.148, 0.104, 0.088, 0.081, 0.069, 0.252, 0.252, 0.233],
];
const T2_TOL: [f64; 6] = [0.04; 6];

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let table: u32 = args[1].parse().unwrap();
    let seed: u64 = args[2].parse().unwrap();
    let m: usize = args[3].parse().unwrap();
    let m1: usize = args[4].parse().unwrap();
    let mden: usize = args[5].parse().unwrap();
    let m_up: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(m);
    let limit: usize = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(10);
    let quiet = args.iter().any(|a| a == "-q");

    let model = ModelSpec::GSobol4.build().unwrap();
    let space =
        InputSpace::new(vec![MarginalDistribution::Uniform { lo: 0.0, hi: 1.0 }; 10]).unwrap();
    let alpha = if table == 1 {
        vec![0.0; 10]
    } else {
        vec![20.0, 20.0, 10.0, 10.0, 10.0, 10.0, 10.0, 1.0, 1.0, 1.0]
    };
    let (printed, tol) = if table == 1 { (T1_PRINTED, T1_TOL) } else { (T2_PRINTED, T2_TOL) };
    let ew = EffectiveWeight::new(
        WeightFunction::polynomial(alpha),
        space,
        StreamKey::root(seed).child(2),
    )
    .unwrap();
    let config = EstimatorConfig::new(m1, m, mden, seed).unwrap();
    let engine = IndexEngine::new(model.clone(), ew.clone(), config).unwrap();
    let config_up = EstimatorConfig::new(m1, m_up, mden.max(10 * m_up), seed).unwrap();
    let engine_up = IndexEngine::new(model.clone(), ew, config_up).unwrap();
    let l1 = KernelSpec::from_name("l1").unwrap().build().unwrap();
    let kq = KernelSpec::from_name("quadratic").unwrap().build().unwrap();

    let t0 = Instant::now();
    let mut worst = (f64::NEG_INFINITY, String::new());
    let mut fails = 0usize;
    for j in 0..limit {
        let subset = SubsetSpec::new(10, vec![j]).unwrap();
        let tj = Instant::now();
        let mut ests = Vec::new();
        for k in [l1.as_ref(), kq.as_ref()] {
            ests.push(engine.first_order(&subset, k).unwrap());
            ests.push(engine.total(&subset, k).unwrap());
            ests.push(engine_up.upsilon(&subset, k).unwrap());
        }
        for (r, est) in ests.iter().enumerate() {
            let err = est.sqrt_value - printed[r][j];
            let rel = err.abs() / tol[r];
            if rel >= worst.0 {
                worst = (rel, format!("X{} {} {}", j + 1, est.kernel, est.kind.label()));
            }
            if rel >= 1.0 {
                fails += 1;
            }
            if !quiet {
                println!(
                    "X{:<2} {:>9} {:<11} est {:.4} printed {:.3} err {:+.4} tolfrac {:.2} se_sqrt {:.4}",
                    j + 1,
                    est.kernel,
                    est.kind.label(),
                    est.sqrt_value,
                    printed[r][j],
                    err,
                    rel,
                    est.sqrt_std_error()
                );
            }
        }
        if !quiet {
            println!(
                "  X{} took {:.1?}s cumulative evals {}",
                j + 1,
                tj.elapsed().as_secs_f64(),
                model.meter().snapshot()
            );
        }
    }
    println!(
        "T{table} seed {seed} m {m} m1 {m1} M {mden}: {:.1}s, {} fails, worst {:.3} of tol at {}",
        t0.elapsed().as_secs_f64(),
        fails,
        worst.0,
        worst.1
    );
}
