use std::time::Instant;

use depthclip::pipeline::{generate_dataset, DatasetSpec, SHAPE_FAMILIES};
use depthclip::{render, ViewKind};
use rayon::prelude::*;

use crate::config::Config;
use crate::error::CliError;

fn default_counts() -> Vec<usize> {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut counts: Vec<usize> = std::iter::successors(Some(1usize), |n| n.checked_mul(2))
        .take_while(|&n| n < cores)
        .collect();
    counts.push(cores);
    counts
}

pub fn run(config: &Config, counts: &[usize], clouds: usize, views: ViewKind, repeats: usize) -> Result<(), CliError> {
    if clouds == 0 || repeats == 0 || counts.contains(&0) {
        return Err(CliError::config("clouds, repeats and thread counts must be positive"));
    }
    let counts = if counts.is_empty() { default_counts() } else { counts.to_vec() };
    let classes = SHAPE_FAMILIES.len();
    let spec = DatasetSpec {
        classes,
        per_class: clouds.div_ceil(classes) + 1,
        test_per_class: 1,
        ..config.dataset.clone()
    };
    let data = generate_dataset(config.seed, &spec)?;
    let set = config.views.set(views);
    let cfg = config.modalities().sparse;
    let jobs: Vec<_> = data
        .samples
        .iter()
        .take(clouds)
        .flat_map(|s| set.views().iter().map(move |v| (&s.cloud, v)))
        .collect();
    let points: usize = jobs.iter().map(|(c, _)| c.len()).sum();

    println!(
        "{} maps of {}x{} per run (R = {}, {:?} rule), best of {repeats}",
        jobs.len(),
        cfg.resolution,
        cfg.resolution,
        cfg.dilation,
        cfg.rule
    );
    println!("{:>7} {:>10} {:>12} {:>14}", "threads", "seconds", "maps/s", "points/s");
    for &t in &counts {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
        let mut best = f64::INFINITY;
        for _ in 0..repeats {
            let start = Instant::now();
            pool.install(|| {
                jobs.par_iter()
                    .map(|(c, v)| render(c, v, &cfg).map(|m| m.occupied_count()))
                    .collect::<Result<Vec<_>, _>>()
            })?;
            best = best.min(start.elapsed().as_secs_f64());
        }
        println!(
            "{t:>7} {best:>10.4} {:>12.1} {:>14.0}",
            jobs.len() as f64 / best,
            points as f64 / best
        );
    }
    Ok(())
}
