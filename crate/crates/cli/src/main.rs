use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cxlsim::config::PRESETS;
use cxlsim::system::stat::CONGESTION;
use cxlsim::workloads::{self, num, Table};
use cxlsim::{RunReport, SimConfig};

#[derive(Parser)]
#[command(name = "cxlsim", version, about = "CXL Type-3 memory expander simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the configured workload and write report.json and curve.csv.
    Run {
        #[command(flatten)]
        src: Source,
        /// Override a numeric field, `path=value` (repeatable).
        #[arg(long = "param", value_name = "PATH=VALUE")]
        params: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one simulation per grid value of a numeric config field.
    Sweep {
        #[command(flatten)]
        src: Source,
        /// Dotted path of the swept field, e.g. `bridge.req_fifo_depth`.
        #[arg(long)]
        param: String,
        /// `v1,v2,...` or `start:stop:count` (inclusive, evenly spaced).
        #[arg(long)]
        grid: String,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long, env = "CXLSIM_THREADS")]
        threads: Option<usize>,
    },
    /// Merge run directories into one figure table.
    Report {
        #[arg(long, value_enum)]
        figure: Figure,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// List presets, or print one as a config document.
    Presets { name: Option<String> },
}

#[derive(Args)]
struct Source {
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Figure {
    Latency,
    Stream,
    Rdwr,
    Congestion,
    Ssd,
}

impl Source {
    fn load(&self) -> Result<SimConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                SimConfig::from_json(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?
            }
            (None, Some(name)) => SimConfig::preset(name)?,
            (None, None) => bail!("one of --config or --preset is required"),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

/// Writes via a temporary file in the same directory, then renames.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| anyhow!("writing {}: {}", path.display(), e.error))?;
    Ok(())
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let grid = match parts.as_slice() {
        [start, stop, count] => {
            let (a, b): (f64, f64) = (start.trim().parse()?, stop.trim().parse()?);
            let n: usize = count.trim().parse()?;
            if n < 2 {
                bail!("grid `{spec}`: a range needs at least 2 points");
            }
            // Round to suppress float noise such as 0.30000000000000004.
            (0..n)
                .map(|i| ((a + (b - a) * i as f64 / (n - 1) as f64) * 1e9).round() / 1e9)
                .collect()
        }
        [list] => list
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| anyhow!("grid value `{v}`: {e}")))
            .collect::<Result<Vec<_>>>()?,
        _ => bail!("grid `{spec}`: expected `v1,v2,...` or `start:stop:count`"),
    };
    if grid.is_empty() {
        bail!("grid `{spec}` is empty");
    }
    Ok(grid)
}

fn run_one(cfg: &SimConfig, out: &Path) -> Result<workloads::WorkloadOutput> {
    let result = workloads::run(cfg).map_err(|e| anyhow!("simulation failed: {e}"))?;
    write_atomic(&out.join("report.json"), &result.report(cfg).to_json())?;
    write_atomic(&out.join("curve.csv"), &result.table.to_csv())?;
    Ok(result)
}

fn cmd_run(src: &Source, params: &[String], out: &Path) -> Result<()> {
    let mut cfg = src.load()?;
    for p in params {
        let (path, value) = p
            .split_once('=')
            .ok_or_else(|| anyhow!("--param `{p}`: expected PATH=VALUE"))?;
        let v: f64 = value.parse().map_err(|e| anyhow!("--param `{p}`: {e}"))?;
        cfg = cfg.with_param(path, v)?;
    }
    run_one(&cfg, out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_sweep(src: &Source, param: &str, grid: &str, out: &Path, threads: Option<usize>) -> Result<()> {
    let base = src.load()?;
    let grid = parse_grid(grid)?;
    // Validate every point before any simulation starts.
    let configs = grid
        .iter()
        .map(|&v| base.with_param(param, v).map_err(anyhow::Error::from))
        .collect::<Result<Vec<_>>>()?;
    let workers = threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, configs.len());
    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<Result<workloads::WorkloadOutput>>>> =
        configs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cfg) = configs.get(i) else { break };
                let r = run_one(cfg, &out.join(format!("point-{i:03}")));
                *results[i].lock().expect("result slot") = Some(r);
            });
        }
    });

    let mut table: Option<Table> = None;
    let mut points = Vec::new();
    for (i, slot) in results.into_iter().enumerate() {
        let r = slot
            .into_inner()
            .expect("result slot")
            .expect("every point ran")
            .with_context(|| format!("sweep point {param}={}", grid[i]))?;
        let head = r.headline();
        let t = table.get_or_insert_with(|| {
            let mut h = vec![param.to_string()];
            h.extend(head.iter().map(|(k, _)| k.clone()));
            Table { header: h, rows: Vec::new() }
        });
        let mut row = vec![num(grid[i])];
        row.extend(head.iter().map(|(_, v)| num(*v)));
        t.push(row);
        points.push(serde_json::json!({
            "value": grid[i],
            "config_digest": configs[i].digest(),
            "dir": format!("point-{i:03}"),
        }));
    }
    let table = table.expect("grid is non-empty");
    write_atomic(&out.join("curve.csv"), &table.to_csv())?;
    let summary = serde_json::json!({
        "param": param,
        "seed": base.seed,
        "workload": base.workload.kind(),
        "points": points,
    });
    write_atomic(
        &out.join("report.json"),
        &(serde_json::to_string_pretty(&summary)? + "\n"),
    )?;
    println!("wrote {} points to {}", grid.len(), out.display());
    Ok(())
}

fn load_report(dir: &Path) -> Result<RunReport> {
    let path = dir.join("report.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn series_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

fn figure_table(figure: Figure, runs: &[(String, RunReport)]) -> Result<Table> {
    let want = match figure {
        Figure::Latency => "latency_sweep",
        Figure::Stream => "stream",
        Figure::Rdwr => "rdwr_sweep",
        Figure::Congestion => "dlrm_proxy",
        Figure::Ssd => "kv_proxy",
    };
    for (name, r) in runs {
        if r.workload != want {
            bail!("run `{name}` is a {} run; this figure needs {want} runs", r.workload);
        }
    }
    let mut header = vec![];
    let names: Vec<&str> = runs.iter().map(|(n, _)| n.as_str()).collect();
    // (key, value per run) rows joined on the first column.
    let mut keyed: Vec<(String, Vec<Option<f64>>)> = Vec::new();
    let mut put = |key: String, run: usize, v: f64| {
        let pos = match keyed.iter().position(|(k, _)| *k == key) {
            Some(p) => p,
            None => {
                keyed.push((key, vec![None; runs.len()]));
                keyed.len() - 1
            }
        };
        keyed[pos].1[run] = Some(v);
    };
    let outputs = |r: &RunReport, key: &str| r.outputs.get(key).cloned().unwrap_or_default();
    match figure {
        Figure::Latency => {
            header.push("array_bytes".to_string());
            for (i, (_, r)) in runs.iter().enumerate() {
                for p in outputs(r, "points").as_array().into_iter().flatten() {
                    put(p["array_bytes"].to_string(), i, p["ns_per_load"].as_f64().unwrap_or(f64::NAN));
                }
            }
        }
        Figure::Stream => {
            header.push("kernel".to_string());
            for (i, (_, r)) in runs.iter().enumerate() {
                for (k, v) in outputs(r, "bandwidth_gbps").as_object().into_iter().flatten() {
                    put(k.clone(), i, v.as_f64().unwrap_or(f64::NAN));
                }
            }
        }
        Figure::Rdwr => {
            header.push("read_fraction".to_string());
            for (i, (_, r)) in runs.iter().enumerate() {
                for p in outputs(r, "peaks").as_array().into_iter().flatten() {
                    let rf = p["read_fraction"].as_f64().unwrap_or(f64::NAN);
                    put(num(rf), i, p["peak_gbps"].as_f64().unwrap_or(f64::NAN));
                }
            }
        }
        Figure::Congestion => {
            header.push("statistic".to_string());
            for (i, (_, r)) in runs.iter().enumerate() {
                for row in CONGESTION {
                    put(row.to_string(), i, r.stat(row).unwrap_or(f64::NAN));
                }
            }
        }
        Figure::Ssd => {
            header.push("metric".to_string());
            for (i, (_, r)) in runs.iter().enumerate() {
                put("ops_per_sec".into(), i, outputs(r, "ops_per_sec").as_f64().unwrap_or(f64::NAN));
                for k in ["ssdcache.hits", "ssdcache.misses", "ssdcache.prefetchIssued", "ssdcache.prefetchUseful"] {
                    put(k.into(), i, r.stat(k).unwrap_or(f64::NAN));
                }
            }
        }
    }
    header.extend(names.iter().map(|s| s.to_string()));
    let mut t = Table { header, rows: Vec::new() };
    for (k, vals) in keyed {
        let mut row = vec![k];
        row.extend(vals.into_iter().map(|v| v.map_or(String::new(), num)));
        t.push(row);
    }
    Ok(t)
}

fn cmd_report(figure: Figure, out: &Path, dirs: &[PathBuf]) -> Result<()> {
    let runs = dirs
        .iter()
        .map(|d| Ok((series_name(d), load_report(d)?)))
        .collect::<Result<Vec<_>>>()?;
    let t = figure_table(figure, &runs)?;
    write_atomic(out, &t.to_csv())?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_presets(name: Option<&str>) -> Result<()> {
    match name {
        Some(n) => print!("{}", SimConfig::preset(n)?.to_json()),
        None => {
            for p in PRESETS {
                println!("{p}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.cmd {
        Cmd::Run { src, params, out } => cmd_run(src, params, out),
        Cmd::Sweep { src, param, grid, out, threads } => cmd_sweep(src, param, grid, out, *threads),
        Cmd::Report { figure, out, runs } => cmd_report(*figure, out, runs),
        Cmd::Presets { name } => cmd_presets(name.as_deref()),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_forms() {
        assert_eq!(parse_grid("13,26,52").unwrap(), vec![13.0, 26.0, 52.0]);
        let g = parse_grid("0.5:1.0:21").unwrap();
        assert_eq!(g.len(), 21);
        assert_eq!(g[1], 0.525);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(parse_grid("1:2").is_err());
        assert!(parse_grid("a,b").is_err());
        assert!(parse_grid("0:1:1").is_err());
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        write_atomic(&p, "a\n").unwrap();
        write_atomic(&p, "b\n").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "b\n");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
