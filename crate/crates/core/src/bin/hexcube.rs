use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use hexcube::config::{PipelineConfig, Spacing};
use hexcube::pipeline::run_pipeline;
use hexcube::Error;

#[derive(Debug, Parser)]
#[command(name = "hexcube", version, about = "Volume-preserving cube maps and hexahedral meshes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Map a closed genus-zero surface to the cube and mesh it.
    ///
    /// Any config key can also be given as `--section.key=value`.
    Map(MapArgs),
}

#[derive(Debug, clap::Args)]
struct MapArgs {
    /// Surface mesh (.obj, .off or .stl).
    input: PathBuf,
    /// Cube shells; the mesh has (2N-1)^3 hexahedra.
    #[arg(long)]
    resolution: Option<usize>,
    /// Voxel edge in model units.
    #[arg(long)]
    spacing: Option<f64>,
    /// Laplacian smoothing iterations.
    #[arg(long = "smooth-iters")]
    smooth_iters: Option<usize>,
    /// Hexahedral mesh output (legacy VTK).
    #[arg(long = "out-mesh")]
    out_mesh: Option<PathBuf>,
    /// Quality report output (JSON).
    #[arg(long = "out-metrics")]
    out_metrics: Option<PathBuf>,
    /// Map output (JSON).
    #[arg(long = "out-map")]
    out_map: Option<PathBuf>,
    /// Config file with `key = value` lines and `[section]` headers.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the model shells as OBJ files next to the mesh output.
    #[arg(long = "debug-shells")]
    debug_shells: bool,
}

/// Splits `--section.key=value` overrides from the arguments clap handles.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    let (overrides, rest) = args.into_iter().partition(|a| {
        a.strip_prefix("--")
            .and_then(|rest| rest.split_once('='))
            .is_some_and(|(key, _)| key.contains('.'))
    });
    (rest, overrides)
}

fn build_config(args: &MapArgs, overrides: &[String]) -> Result<PipelineConfig, Error> {
    let mut config = PipelineConfig::default();
    if let Some(path) = &args.config {
        config.apply_file(path)?;
    }
    config.apply_overrides(overrides)?;
    config.input = args.input.clone();
    if let Some(n) = args.resolution {
        config.set("resolution", &n.to_string())?;
    }
    if let Some(s) = args.spacing {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Config(format!("--spacing {s}: must be positive")));
        }
        config.spacing = Spacing::Fixed(s);
    }
    if let Some(k) = args.smooth_iters {
        config.smoothing.iterations = k;
    }
    if let Some(p) = &args.out_mesh {
        config.outputs.hex_vtk = Some(p.clone());
    }
    if let Some(p) = &args.out_metrics {
        config.outputs.metrics_json = Some(p.clone());
    }
    if let Some(p) = &args.out_map {
        config.outputs.map_json = Some(p.clone());
    }
    if args.debug_shells {
        config.outputs.debug_shells = true;
    }
    Ok(config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    let Command::Map(map) = cli.command;
    let result = build_config(&map, &overrides).and_then(|config| run_pipeline(&config));
    match result {
        Ok(out) => {
            let r = &out.report;
            println!(
                "{} hexahedra, volume variance {:.3e}, concave {:.2}%, {:.1} s",
                r.hexahedra,
                r.volume_variance,
                100.0 * r.concave_fraction,
                r.wall_time_sec
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(a: &[&str]) -> Vec<String> {
        a.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn dotted_overrides_are_split_off() {
        let (rest, over) = split_overrides(strings(&[
            "hexcube",
            "map",
            "in.obj",
            "--gac.eps=2",
            "--resolution",
            "4",
            "--out-mesh=a.vtk",
        ]));
        assert_eq!(over, strings(&["--gac.eps=2"]));
        assert_eq!(rest, strings(&["hexcube", "map", "in.obj", "--resolution", "4", "--out-mesh=a.vtk"]));
    }

    #[test]
    fn flags_win_over_overrides() {
        let cli = Cli::parse_from(["hexcube", "map", "in.obj", "--resolution", "5"]);
        let Command::Map(args) = cli.command;
        let c = build_config(&args, &strings(&["--resolution=3", "--smoothing.iterations=2"])).unwrap();
        assert_eq!(c.resolution, 5);
        assert_eq!(c.smoothing.iterations, 2);
        assert_eq!(c.input, PathBuf::from("in.obj"));
    }
}
