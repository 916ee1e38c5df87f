use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use i2a_core::benchmark::{
    ablation_csv, run_cell, AblationConfig, AblationError, AblationRow, SeedData, TaskSpec,
};

use super::{num, Context};
use crate::error::CliResult;
use crate::run::OutputDir;

pub const ABLATION_FILE: &str = "ablation.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const BASELINE: &str = "Ex0";

/// One row per task and configuration: the success rate of every seed, their
/// mean and the margin of the mean over the `Ex0` row of the same task.
pub fn summary_csv(rows: &[AblationRow]) -> String {
    let seeds: BTreeSet<u64> = rows.iter().map(|r| r.seed).collect();
    let mut cells: BTreeMap<(&str, &str), BTreeMap<u64, f64>> = BTreeMap::new();
    for r in rows {
        cells
            .entry((r.task_id.as_str(), r.config_name.as_str()))
            .or_default()
            .insert(r.seed, r.success_rate);
    }
    let mean = |m: &BTreeMap<u64, f64>| m.values().sum::<f64>() / m.len() as f64;
    let mut out = String::from("task_id,config_name");
    for s in &seeds {
        out.push_str(&format!(",seed_{s}"));
    }
    out.push_str(",mean,margin_vs_Ex0\n");
    for ((task, config), by_seed) in &cells {
        out.push_str(&format!("{task},{config}"));
        for s in &seeds {
            out.push(',');
            if let Some(v) = by_seed.get(s) {
                out.push_str(&num(*v));
            }
        }
        let m = mean(by_seed);
        out.push_str(&format!(",{}", num(m)));
        out.push(',');
        if let Some(base) = cells.get(&(*task, BASELINE)) {
            out.push_str(&num(m - mean(base)));
        }
        out.push('\n');
    }
    out
}

fn write_tables(out: &OutputDir, rows: &[AblationRow]) -> CliResult<()> {
    out.write(ABLATION_FILE, ablation_csv(rows).as_bytes())?;
    out.write(SUMMARY_FILE, summary_csv(rows).as_bytes())?;
    Ok(())
}

fn run_seed(
    spec: &TaskSpec,
    seed: u64,
    configs: &[AblationConfig],
    ctx: &Context,
    rows: &Mutex<Vec<AblationRow>>,
    out: &OutputDir,
) -> CliResult<()> {
    let settings = ctx.config.settings();
    let mut data = SeedData::new(spec, seed, &settings).map_err(anyhow::Error::from)?;
    for c in configs {
        let row = run_cell(spec, c, &mut data, &settings).map_err(anyhow::Error::from)?;
        eprintln!(
            "{} {} seed {}: {}/{} ({:.1}s)",
            row.task_id, row.config_name, row.seed, row.n_success, row.n_eval, row.wall_time_s
        );
        let mut all = rows.lock().unwrap_or_else(|e| e.into_inner());
        all.push(row);
        write_tables(out, &all)?;
    }
    Ok(())
}

/// Runs the configured matrix. Seeds are spread over `threads` workers;
/// tables are rewritten after every cell so partial results survive an
/// error.
pub fn ablate(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    let configs: Vec<AblationConfig> = cfg
        .ablation
        .configs
        .iter()
        .map(|n| cfg.ablation_config(n, cfg.ablation.seeds.clone()))
        .collect::<Result<_, _>>()
        .map_err(anyhow::Error::msg)?;
    for c in &configs {
        c.validate()
            .map_err(|e: AblationError| anyhow::Error::from(e))?;
    }
    let out = ctx.output()?;
    let specs = cfg.task_specs();
    let jobs: Vec<(&TaskSpec, u64)> = specs
        .iter()
        .flat_map(|s| cfg.ablation.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let rows = Mutex::new(Vec::new());
    let next = AtomicUsize::new(0);
    let workers = cfg.threads.min(jobs.len()).max(1);
    let results: Vec<CliResult<()>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| -> CliResult<()> {
                    loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        let Some(&(spec, seed)) = jobs.get(i) else {
                            return Ok(());
                        };
                        if let Err(e) = run_seed(spec, seed, &configs, ctx, &rows, &out) {
                            next.store(jobs.len(), Ordering::SeqCst);
                            return Err(e);
                        }
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let rows = rows.into_inner().unwrap_or_else(|e| e.into_inner());
    write_tables(&out, &rows)?;
    out.write_metadata(&ctx.metadata("ablate")?)?;
    results.into_iter().collect()
}
