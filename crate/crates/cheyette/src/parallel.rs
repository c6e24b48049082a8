//! Multi-threaded Monte Carlo. Paths are split into fixed chunks and concatenated in order, and
//! each path depends only on `(seed, index)`, so results do not depend on the worker count.

use std::ops::Range;

use cheyette_core::mc::{simulate_1f_paths, simulate_2f_paths, PhiloxNormals};
use cheyette_core::{CheyetteParams1F, CheyetteParams2F, LocalVolSurface, McConfig, PathEnsemble1F, PathEnsemble2F};
use rayon::prelude::*;

use crate::error::{CliError, Result};

const CHUNK: usize = 4096;

fn chunks(n: usize) -> Vec<Range<usize>> {
    (0..n.div_ceil(CHUNK)).map(|c| c * CHUNK..((c + 1) * CHUNK).min(n)).collect()
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {workers} workers: {e}")))
}

pub fn simulate_1f(
    params: &CheyetteParams1F,
    lv: &LocalVolSurface,
    maturity: f64,
    config: &McConfig,
    workers: usize,
) -> Result<PathEnsemble1F> {
    config.validate().map_err(CliError::Simulation)?;
    let normals = PhiloxNormals::new(config.seed);
    let parts = pool(workers)?.install(|| {
        chunks(config.n_paths)
            .into_par_iter()
            .map(|r| simulate_1f_paths(params, lv, maturity, config, &normals, r))
            .collect::<Vec<_>>()
    });
    let mut x = Vec::with_capacity(config.n_paths);
    let mut y = Vec::with_capacity(config.n_paths);
    for part in parts {
        let (px, py) = part.map_err(CliError::Simulation)?;
        x.extend(px);
        y.extend(py);
    }
    Ok(PathEnsemble1F { maturity, x, y, antithetic: config.antithetic })
}

pub fn simulate_2f(
    params: &CheyetteParams2F,
    lv: &LocalVolSurface,
    maturity: f64,
    config: &McConfig,
    workers: usize,
) -> Result<PathEnsemble2F> {
    config.validate().map_err(CliError::Simulation)?;
    let normals = PhiloxNormals::new(config.seed);
    let parts = pool(workers)?.install(|| {
        chunks(config.n_paths)
            .into_par_iter()
            .map(|r| simulate_2f_paths(params, lv, maturity, config, &normals, r))
            .collect::<Vec<_>>()
    });
    let n = config.n_paths;
    let mut e = PathEnsemble2F {
        maturity,
        x1: Vec::with_capacity(n),
        x2: Vec::with_capacity(n),
        y11: Vec::with_capacity(n),
        y12: Vec::with_capacity(n),
        y22: Vec::with_capacity(n),
        antithetic: config.antithetic,
    };
    for part in parts {
        let (x1, x2, y11, y12, y22) = part.map_err(CliError::Simulation)?;
        e.x1.extend(x1);
        e.x2.extend(x2);
        e.y11.extend(y11);
        e.y12.extend(y12);
        e.y22.extend(y22);
    }
    Ok(e)
}
