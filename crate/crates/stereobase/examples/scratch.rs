use stereobase::scene::{generate, SceneSpec};
use stereobase::solver::{calibrate, objective};
use stereobase::SolverConfig;

fn main() {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(4);
    let spec = SceneSpec {
        noise_px: 0.5,
        seed,
        ..SceneSpec::default()
    };
    let truth = generate(&spec).unwrap();
    let config = SolverConfig::default();
    let obs = &truth.noisy_observations;

    let at_truth = objective(obs, &truth.rig, truth.f1, truth.monocular_cameras(), &config);
    println!("truth f1 = {:.2}, objective at truth = {:?}", truth.f1, at_truth);

    match calibrate(obs, &truth.rig, &config) {
        Ok(r) => {
            println!(
                "solved f1 = {:.2}  objective = {:.6}  grid_f1 = {:.2}  grid_index = {}  iters = {}  converged = {}",
                r.f1,
                r.objective_value,
                r.diagnostics.grid_f1_px,
                r.diagnostics.grid_index,
                r.diagnostics.iterations,
                r.diagnostics.converged
            );
            let t = &r.diagnostics.objective_trace;
            println!(
                "trace: start {:.4} -> end {:.6} ({} accepted)",
                t[0],
                t[t.len() - 1],
                t.len()
            );
            for (i, c) in r.cameras.iter().enumerate() {
                println!("cam {}: f = {:.2} (truth {:.2})", i + 2, c.camera.f, truth.cameras[i + 2].f);
            }
        }
        Err(stereobase::Error::NotConverged { iterations, result }) => {
            println!(
                "NOT CONVERGED after {iterations}: f1 = {:.2} objective = {:.6} grid_f1 = {:.2}",
                result.f1, result.objective_value, result.diagnostics.grid_f1_px
            );
            let t = &result.diagnostics.objective_trace;
            println!(
                "trace: start {:.4} -> end {:.6} ({} accepted), last rel steps:",
                t[0],
                t[t.len() - 1],
                t.len()
            );
            for w in t.windows(2).rev().take(5) {
                println!("  rel decrease {:.3e}", (w[0] - w[1]) / w[0]);
            }
        }
        Err(e) => println!("error: {e}"),
    }
}
