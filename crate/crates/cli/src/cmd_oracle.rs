use std::fmt::Write as _;
use std::path::Path;

use cgtn_core::arch::{parse_arch, Network};
use cgtn_core::sympoly::{
    expand_network, support_matrix, support_matrix_csv, verify_against_numeric, Polynomial,
};
use cgtn_core::{CoreError, Result};
use cgtn_tensor::Tensor;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::run::RunDir;

/// Two stacked quadratic cluster layers over a 2x2 input: the first folds
/// each row pair, the second folds the two row outputs into one scalar.
const DEFAULT_STACK: &str = "CG(1,2,1,1,2)\nCG(2,1,1,1,1)";

/// Random odd integers make every structurally reachable coefficient
/// nonzero: no sum of even terms plus one odd term can cancel to zero.
fn set_odd_coeffs(net: &mut Network<f64>, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in 0..net.specs().len() {
        let Ok(t) = net.param_tensor(layer, "coeff") else {
            continue;
        };
        let shape = t.shape().to_vec();
        let data: Vec<f64> = (0..t.numel())
            .map(|_| (2 * rng.gen_range(-5i64..5) + 1) as f64)
            .collect();
        net.set_param_tensor(layer, "coeff", Tensor::new(shape, data)?)?;
    }
    Ok(())
}

pub fn run(cfg: &RunConfig, vars: usize, stack: Option<&Path>, order: usize) -> Result<()> {
    let dir = RunDir::claim(cfg, "oracle")?;
    let (specs, input_shape) = match stack {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(CoreError::Io)?;
            (parse_arch(&text)?, (1, 1, vars))
        }
        None => {
            if vars != 4 {
                return Err(CoreError::Config(format!(
                    "the built-in stack reads 4 variables; --vars {vars} needs --stack"
                )));
            }
            (parse_arch(DEFAULT_STACK)?, (1, 2, 2))
        }
    };
    let mut net = Network::<f64>::build(specs, input_shape, cfg.seed)?;
    set_odd_coeffs(&mut net, cfg.seed.wrapping_add(1))?;

    let polys: Vec<Polynomial<BigRational>> = expand_network(&net, 1 << 22)?;
    let z = polys
        .first()
        .ok_or_else(|| CoreError::Config("stack produced no outputs".into()))?;
    println!("expanded degree {} with {} terms", z.degree(), z.num_terms());

    let left: Vec<usize> = (0..vars / 2).collect();
    let right: Vec<usize> = (vars / 2..vars).collect();
    let (rows, cols, grid) = support_matrix(z, &left, &right, order)?;
    let csv = support_matrix_csv(&rows, &cols, &grid);
    dir.write("support.csv", &csv)?;

    let nonzero: usize = grid.iter().flatten().filter(|&&b| b).count();
    let agreement = verify_against_numeric(&polys, &net, 100, cfg.seed.wrapping_add(2))?;
    let mut summary = String::new();
    let _ = writeln!(summary, "rows = {}", rows.len());
    let _ = writeln!(summary, "cols = {}", cols.len());
    let _ = writeln!(summary, "nonzero = {nonzero}");
    let _ = writeln!(summary, "degree = {}", z.degree());
    let _ = writeln!(summary, "numeric_trials = {}", agreement.trials);
    let _ = writeln!(summary, "numeric_max_rel_err = {:e}", agreement.max_rel_err);
    dir.write("oracle.txt", &summary)?;

    println!(
        "{}x{} support matrix, {nonzero} nonzero entries",
        rows.len(),
        cols.len()
    );
    println!(
        "numeric agreement over {} points: max rel err {:e}",
        agreement.trials, agreement.max_rel_err
    );
    if agreement.max_rel_err > 1e-6 {
        return Err(CoreError::Numeric(format!(
            "symbolic and numeric evaluations disagree: {:e}",
            agreement.max_rel_err
        )));
    }
    println!("wrote {}", dir.path.display());
    Ok(())
}
