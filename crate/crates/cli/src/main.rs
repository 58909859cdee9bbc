//! Command-line front end: model/config loading, the analysis commands and
//! reproducible machine-readable outputs.
//!
//! Exit codes: 0 success, 1 validation error, 2 total computational failure.

mod config;
mod output;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pwscatter_core::hetero::{self, HeteroSettings, ScanParams};
use pwscatter_core::impact::{ImpactMap, SectionPoint};
use pwscatter_core::melnikov::{self, QuadSettings};
use pwscatter_core::model::{Connection, Flows, Model, ReferenceCoords, RockingBlock};
use pwscatter_core::parallel::map_indexed;
use pwscatter_core::report;

use config::{invalid, parse_connection, CommonArgs, GridSpec, ValidationError};
use output::OutputWriter;

#[derive(Parser)]
#[command(
    name = "pwscatter",
    version,
    about = "Impact maps, Melnikov distances and scattering-map energy transfer \
             for periodically forced coupled piecewise-smooth Hamiltonian systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Melnikov profile over a zeta grid with its simple zeros.
    Melnikov(MelnikovArgs),
    /// Measured manifold distance over a zeta grid, against the Melnikov
    /// prediction.
    Distance(DistanceArgs),
    /// Locate heteroclinic connections at the requested Melnikov zeros.
    Hetero(HeteroArgs),
    /// Running energy averages forward/backward along a located connection.
    Average(AverageArgs),
    /// (theta, v) scan of zeros and first-order average-energy differences.
    Scan(ScanArgs),
    /// Impact sequence of a section point.
    Impact(ImpactArgs),
}

#[derive(Args)]
struct MelnikovArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Section velocity v in (0, 1).
    #[arg(long, default_value = "0.48")]
    v: f64,
    /// Orbit phase fraction theta in [0, 1).
    #[arg(long, default_value = "0")]
    theta: f64,
    /// Forcing phase s in [0, T).
    #[arg(long, default_value = "0")]
    s: f64,
    /// Zeta grid start:stop:count.
    #[arg(long, default_value = "0:8:2000")]
    zeta: GridSpec,
    /// Heteroclinic connection: up or down.
    #[arg(long, default_value = "up", value_parser = parse_connection)]
    connection: Connection,
}

#[derive(Args)]
struct DistanceArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value = "0.48")]
    v: f64,
    #[arg(long, default_value = "0")]
    theta: f64,
    #[arg(long, default_value = "0")]
    s: f64,
    /// Zeta grid start:stop:count.
    #[arg(long, default_value = "0:4:40")]
    zeta: GridSpec,
    #[arg(long, default_value = "up", value_parser = parse_connection)]
    connection: Connection,
}

#[derive(Args)]
struct HeteroArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value = "0.48")]
    v: f64,
    #[arg(long, default_value = "0")]
    theta: f64,
    #[arg(long, default_value = "0")]
    s: f64,
    /// Positive Melnikov zero ordinals to connect (comma-separated).
    #[arg(long = "zero-index", value_delimiter = ',', default_value = "1")]
    zero_index: Vec<usize>,
    /// Points in the seeding Melnikov profile.
    #[arg(long, default_value_t = 400)]
    profile_points: usize,
    #[arg(long, default_value = "up", value_parser = parse_connection)]
    connection: Connection,
}

#[derive(Args)]
struct AverageArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value = "0.48")]
    v: f64,
    #[arg(long, default_value = "0")]
    theta: f64,
    #[arg(long, default_value = "0")]
    s: f64,
    /// Positive Melnikov zero ordinal.
    #[arg(long = "zero-index", default_value_t = 1)]
    zero_index: usize,
    /// Integration horizon for the measured averages.
    #[arg(long, default_value_t = 40.0)]
    horizon: f64,
    #[arg(long, default_value_t = 400)]
    profile_points: usize,
    #[arg(long, default_value = "up", value_parser = parse_connection)]
    connection: Connection,
}

#[derive(Args)]
struct ScanArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Theta grid start:stop:count.
    #[arg(long, default_value = "0:1:32")]
    theta: GridSpec,
    /// V grid start:stop:count.
    #[arg(long, default_value = "0.1:0.9:32")]
    v: GridSpec,
    #[arg(long, default_value = "0")]
    s: f64,
    #[arg(long = "zero-index", default_value_t = 1)]
    zero_index: usize,
    /// Points per Melnikov profile.
    #[arg(long, default_value_t = 240)]
    profile_points: usize,
    /// Horizon of the first-order average formula.
    #[arg(long, default_value_t = 200.0)]
    avg_t_max: f64,
    /// Also bisect the true connection per cell (slow).
    #[arg(long, default_value_t = false)]
    with_zeta_star: bool,
    #[arg(long, default_value = "up", value_parser = parse_connection)]
    connection: Connection,
}

#[derive(Args)]
struct ImpactArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Section velocity (nonzero).
    #[arg(long, default_value = "0.48")]
    v: f64,
    #[arg(long, default_value = "1")]
    x: f64,
    #[arg(long, default_value = "0")]
    y: f64,
    #[arg(long, default_value = "0")]
    s: f64,
    #[arg(long = "n-forward", default_value_t = 8)]
    n_forward: usize,
    #[arg(long = "n-backward", default_value_t = 0)]
    n_backward: usize,
}

enum CmdError {
    Validation(ValidationError),
    Computation(String),
    Io(std::io::Error),
}

impl From<ValidationError> for CmdError {
    fn from(e: ValidationError) -> Self {
        CmdError::Validation(e)
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::Io(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // keep clap's rendered help/usage but use the documented codes
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            e.print().ok();
            return if is_help {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    let result = match cli.command {
        Command::Melnikov(args) => cmd_melnikov(args),
        Command::Distance(args) => cmd_distance(args),
        Command::Hetero(args) => cmd_hetero(args),
        Command::Average(args) => cmd_average(args),
        Command::Scan(args) => cmd_scan(args),
        Command::Impact(args) => cmd_impact(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Validation(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(CmdError::Computation(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(CmdError::Io(e)) => {
            eprintln!("io error: {e}");
            ExitCode::from(2)
        }
    }
}

fn coords_for(
    model: &RockingBlock<f64>,
    theta: f64,
    v: f64,
    s: f64,
) -> Result<ReferenceCoords<f64>, CmdError> {
    ReferenceCoords::new(model, theta, v, s)
        .map_err(|e| CmdError::Validation(invalid(e.to_string())))
}

/// Default zeta span covering the requested positive-zero ordinal.
fn default_span(model: &RockingBlock<f64>, v: f64, max_index: usize) -> f64 {
    let alpha = model.alpha(v).unwrap_or(model.forcing_period());
    model.forcing_period().max(alpha) * (max_index + 2) as f64
}

fn cmd_melnikov(args: MelnikovArgs) -> Result<(), CmdError> {
    args.common.validate()?;
    args.zeta.validate("zeta").map_err(CmdError::Validation)?;
    let model = args.common.resolve_model()?;
    let coords = coords_for(&model, args.theta, args.v, args.s)?;
    let quad = args.common.quad_settings();

    let profile = melnikov::melnikov_profile(
        &model,
        args.connection,
        &coords,
        (args.zeta.start, args.zeta.stop.max(args.zeta.start + 1e-9)),
        args.zeta.count,
        &quad,
        args.common.workers(),
    )
    .map_err(|e| CmdError::Computation(e.to_string()))?;

    let zeros = match melnikov::find_zeros(&model, &profile, 1e-9) {
        Ok(z) => z,
        Err(melnikov::MelnikovError::NoSignChange) => melnikov::ZeroFindResult {
            zeros: Vec::new(),
            non_simple: 0,
        },
        Err(e) => return Err(CmdError::Computation(e.to_string())),
    };

    let mut writer = OutputWriter::new(&args.common.out, "melnikov")?;
    writer.write("melnikov.csv", &report::melnikov_csv(&profile))?;
    writer.write(
        "zeros.json",
        &report::zeros_json(&zeros.zeros, zeros.non_simple),
    )?;
    writer.finish(&args.common.run_config(&model))?;
    Ok(())
}

fn cmd_distance(args: DistanceArgs) -> Result<(), CmdError> {
    args.common.validate()?;
    args.zeta.validate("zeta").map_err(CmdError::Validation)?;
    let model = args.common.resolve_model()?;
    let coords = coords_for(&model, args.theta, args.v, args.s)?;
    let quad = args.common.quad_settings();
    let mut settings = args.common.hetero_settings();
    settings.workers = 1; // parallelism runs across zeta values

    let zetas = args.zeta.values();
    let rows = map_indexed(zetas.len(), args.common.workers(), |i| {
        let zeta = zetas[i];
        let d = hetero::real_distance(&model, args.connection, zeta, &coords, &settings);
        let m = melnikov::melnikov(&model, args.connection, zeta, &coords, &quad);
        (d, m)
    });

    let mut ok_rows = Vec::new();
    let mut failures = 0usize;
    for (d, m) in rows {
        match (d, m) {
            (Ok(d), Ok(m)) => ok_rows.push((d, m)),
            _ => failures += 1,
        }
    }
    if ok_rows.is_empty() {
        return Err(CmdError::Computation(format!(
            "all {failures} distance evaluations failed"
        )));
    }
    if failures > 0 {
        eprintln!("warning: {failures} of {} zeta values failed", zetas.len());
    }

    let mut writer = OutputWriter::new(&args.common.out, "distance")?;
    writer.write(
        "distance.csv",
        &report::distance_csv(&ok_rows, model.params.eps),
    )?;
    writer.finish(&args.common.run_config(&model))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn locate_connections(
    model: &RockingBlock<f64>,
    connection: Connection,
    coords: &ReferenceCoords<f64>,
    zero_indices: &[usize],
    profile_points: usize,
    quad: &QuadSettings<f64>,
    settings: &HeteroSettings<f64>,
    workers: usize,
) -> Result<Vec<Result<hetero::HeteroclinicConnection<f64>, String>>, CmdError> {
    let max_index = zero_indices.iter().copied().max().unwrap_or(1);
    let span = default_span(model, coords.v, max_index);
    let profile = melnikov::melnikov_profile(
        model,
        connection,
        coords,
        (0.0, span),
        profile_points,
        quad,
        workers,
    )
    .map_err(|e| CmdError::Computation(e.to_string()))?;
    let zeros = melnikov::find_zeros(model, &profile, 1e-9)
        .map_err(|e| CmdError::Computation(e.to_string()))?;

    Ok(zero_indices
        .iter()
        .map(|&idx| {
            let Some(zero) = zeros.zeros.iter().find(|z| z.index == Some(idx)) else {
                return Err(format!(
                    "no positive zero with ordinal {idx} in span {span}"
                ));
            };
            hetero::find_heteroclinic(model, connection, zero, coords, settings)
                .map_err(|e| e.to_string())
        })
        .collect())
}

fn cmd_hetero(args: HeteroArgs) -> Result<(), CmdError> {
    args.common.validate()?;
    if args.zero_index.is_empty() {
        return Err(CmdError::Validation(invalid(
            "zero-index: need at least one ordinal",
        )));
    }
    if args.zero_index.contains(&0) {
        return Err(CmdError::Validation(invalid(
            "zero-index: ordinals are 1-based",
        )));
    }
    let model = args.common.resolve_model()?;
    let coords = coords_for(&model, args.theta, args.v, args.s)?;
    let settings = args.common.hetero_settings();
    let started = std::time::Instant::now();

    let results = locate_connections(
        &model,
        args.connection,
        &coords,
        &args.zero_index,
        args.profile_points,
        &args.common.quad_settings(),
        &settings,
        args.common.workers(),
    )?;

    let wall = started.elapsed().as_secs_f64() * 1e3;
    let mut records = Vec::new();
    let mut ok = 0usize;
    for (idx, res) in args.zero_index.iter().zip(results.iter()) {
        match res {
            Ok(conn) => {
                ok += 1;
                records.push(report::connection_json(
                    conn,
                    settings.bisect_tol,
                    settings.distance_tol,
                    Some(wall / args.zero_index.len() as f64),
                ));
            }
            Err(e) => {
                records.push(format!(
                    "{{\n  \"zero_index\": {idx},\n  \"status\": \"failed\",\n  \"error\": {}\n}}\n",
                    serde_json::to_string(e).unwrap_or_else(|_| "\"unknown\"".into())
                ));
            }
        }
    }
    if ok == 0 {
        return Err(CmdError::Computation(
            "no heteroclinic connection could be located".into(),
        ));
    }

    let mut body = String::from("[\n");
    for (i, r) in records.iter().enumerate() {
        body.push_str(r.trim_end());
        if i + 1 < records.len() {
            body.push(',');
        }
        body.push('\n');
    }
    body.push_str("]\n");

    let mut writer = OutputWriter::new(&args.common.out, "hetero")?;
    writer.write("connections.json", &body)?;
    writer.finish(&args.common.run_config(&model))?;
    Ok(())
}

fn cmd_average(args: AverageArgs) -> Result<(), CmdError> {
    args.common.validate()?;
    if args.zero_index == 0 {
        return Err(CmdError::Validation(invalid(
            "zero-index: ordinals are 1-based",
        )));
    }
    if args.horizon.is_nan() || args.horizon <= 0.0 {
        return Err(CmdError::Validation(invalid("horizon must be positive")));
    }
    let model = args.common.resolve_model()?;
    let coords = coords_for(&model, args.theta, args.v, args.s)?;
    let settings = args.common.hetero_settings();

    let results = locate_connections(
        &model,
        args.connection,
        &coords,
        &[args.zero_index],
        args.profile_points,
        &args.common.quad_settings(),
        &settings,
        args.common.workers(),
    )?;
    let conn = match &results[0] {
        Ok(c) => c,
        Err(e) => return Err(CmdError::Computation(e.clone())),
    };

    let measured = hetero::measured_average_diff(
        &model,
        &conn.z_star,
        args.horizon,
        &args.common.step_control(),
        0.2,
    );

    let mut writer = OutputWriter::new(&args.common.out, "average")?;
    writer.write(
        "average_forward.csv",
        &report::average_csv(&measured.forward),
    )?;
    writer.write(
        "average_backward.csv",
        &report::average_csv(&measured.backward),
    )?;
    writer.write("average.json", &report::measured_average_json(&measured))?;
    writer.write(
        "connection.json",
        &report::connection_json(conn, settings.bisect_tol, settings.distance_tol, None),
    )?;
    writer.finish(&args.common.run_config(&model))?;
    Ok(())
}

fn cmd_scan(args: ScanArgs) -> Result<(), CmdError> {
    args.common.validate()?;
    args.theta.validate("theta").map_err(CmdError::Validation)?;
    args.v.validate("v").map_err(CmdError::Validation)?;
    if args.zero_index == 0 {
        return Err(CmdError::Validation(invalid(
            "zero-index: ordinals are 1-based",
        )));
    }
    let model = args.common.resolve_model()?;
    let mut settings = args.common.hetero_settings();
    settings.workers = args.common.workers();

    let params = ScanParams {
        zero_index: args.zero_index,
        profile_points: args.profile_points,
        zeta_span: None,
        avg_t_max: args.avg_t_max,
        compute_zeta_star: args.with_zeta_star,
        relabel_threshold: None,
    };
    let result = hetero::scan(
        &model,
        args.connection,
        &args.theta.values(),
        &args.v.values(),
        args.s,
        &params,
        &settings,
    );

    let ok = result
        .cells
        .iter()
        .filter(|c| c.status == hetero::ScanStatus::Ok)
        .count();
    if ok == 0 && !result.cells.is_empty() {
        return Err(CmdError::Computation("every scan cell failed".into()));
    }

    let mut writer = OutputWriter::new(&args.common.out, "scan")?;
    writer.write("scan.csv", &report::scan_csv(&result))?;
    writer.finish(&args.common.run_config(&model))?;
    Ok(())
}

fn cmd_impact(args: ImpactArgs) -> Result<(), CmdError> {
    args.common.validate()?;
    if args.v == 0.0 {
        return Err(CmdError::Validation(invalid(
            "v must be nonzero on the section",
        )));
    }
    let model = args.common.resolve_model()?;
    let map = ImpactMap::new(&model, args.common.step_control());
    let w = SectionPoint::new(args.v, args.x, args.y, args.s);
    let seq = map
        .impact_sequence(&w, args.n_forward, args.n_backward)
        .map_err(|e| CmdError::Computation(e.to_string()))?;

    let mut writer = OutputWriter::new(&args.common.out, "impact")?;
    writer.write("impact.csv", &report::impact_csv(&seq))?;
    writer.finish(&args.common.run_config(&model))?;
    Ok(())
}
