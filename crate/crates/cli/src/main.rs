mod angle;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use mmc_modlab::fmt::{g9, svg_lines, write_csv};
use mmc_modlab::params::{wrap_angle, ConfigFile};
use mmc_modlab::region::{self, Scanner, BOUNDARY_HEADER, REGION_HEADER, SIZING_HEADER};
use mmc_modlab::simulator::{self, ControllerConfig, ExtractedMetrics, SimOptions, SimSeries, STEP_BAND};
use mmc_modlab::steady_state;
use mmc_modlab::waveform::{self, cap_voltage_report, RwfEvaluator, DEFAULT_SAMPLES, EQUIVALENCE_TOL};
use mmc_modlab::{pq_of, ConverterParams, Error, OperatingPoint, RequiredRange, Scheme};

use angle::{parse_angle_expr, parse_pair};

/// Active or reactive excursion allowed on the axis that is not being stepped.
const DECOUPLING_BAND: f64 = 0.05;

#[derive(Parser)]
#[command(
    name = "mmc-modlab",
    version,
    about = "Compare MMC modulation schemes: steady state, PQ regions, sizing, simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Built-in parameter set.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// TOML file with [converter] and [range] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the valve-side voltage U_ACV* (p.u.).
    #[arg(long)]
    uacv: Option<f64>,
    /// Override Q_max of the required range (p.u.).
    #[arg(long)]
    qmax: Option<f64>,
    /// Read angle arguments in degrees.
    #[arg(long)]
    deg: bool,
    /// CSV output file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// SVG chart output file.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Run manifest (JSON); defaults to `<out>.manifest.json` when an output is written.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Steady state, margin and capacitor voltage at one operating point.
    Point {
        #[command(flatten)]
        common: Common,
        #[arg(long = "scheme", default_value = "direct")]
        schemes: Vec<String>,
        #[arg(long)]
        i: f64,
        #[arg(long, allow_hyphen_values = true)]
        phi: String,
    },
    /// Margin along the boundary of the required range.
    Boundary {
        #[command(flatten)]
        common: Common,
        #[arg(long = "scheme")]
        schemes: Vec<String>,
        #[arg(long, default_value = "pi/180")]
        dphi: String,
    },
    /// Linear-modulation PQ region.
    Region {
        #[command(flatten)]
        common: Common,
        #[arg(long = "scheme")]
        schemes: Vec<String>,
        #[arg(long, default_value = "pi/360")]
        dphi: String,
        #[arg(long, default_value_t = region::DEFAULT_DI_REGION)]
        di: f64,
    },
    /// Maximum valve-side voltage keeping linear modulation over the whole range.
    Msacv {
        #[command(flatten)]
        common: Common,
        #[arg(long = "scheme")]
        schemes: Vec<String>,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
    },
    /// Submodule capacitance meeting the capacitor peak limit at each scheme's MS-ACV.
    Sizecap {
        #[command(flatten)]
        common: Common,
        #[arg(long = "scheme")]
        schemes: Vec<String>,
        #[arg(long, default_value_t = 1.1)]
        peak_limit: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Time-domain run to steady state with metrics against the analytics.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "direct")]
        scheme: String,
        #[arg(long)]
        i: f64,
        #[arg(long, allow_hyphen_values = true)]
        phi: String,
        /// Feed the solved direct references with the ac current loop disabled.
        #[arg(long)]
        openloop: bool,
        #[arg(long, default_value_t = 150)]
        periods: usize,
        /// Periods written to the series CSV, counted back from the end.
        #[arg(long, default_value_t = 2)]
        record_periods: usize,
    },
    /// Reference step between two operating points.
    Step {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "indirect")]
        scheme: String,
        /// `i,phi` before the step.
        #[arg(long, allow_hyphen_values = true)]
        from: String,
        /// `i,phi` after the step.
        #[arg(long, allow_hyphen_values = true)]
        to: String,
        #[arg(long, default_value_t = 100)]
        step_period: usize,
        #[arg(long, default_value_t = 250)]
        periods: usize,
    },
    /// Indirect against improved-direct RWFs at one point.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        i: f64,
        #[arg(long, allow_hyphen_values = true)]
        phi: String,
    },
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::from(e))
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Core(e) => match e {
                Error::InvalidParameter { .. } | Error::Config(_) | Error::Io(_) => 2,
                Error::Unstable { .. } | Error::NotSettled { .. } => 4,
                _ => 3,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

type Outcome = Result<(), Failure>;

#[derive(Serialize)]
struct RunManifest {
    command: String,
    args: Vec<String>,
    version: &'static str,
    parameters: ConfigFile,
    settings: BTreeMap<String, Value>,
    outputs: Vec<String>,
    wall_clock_s: f64,
}

/// What one command run did, for the manifest.
struct Run {
    name: &'static str,
    started: Instant,
    params: ConverterParams,
    range: RequiredRange,
    settings: BTreeMap<String, Value>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn new(name: &'static str, common: &Common) -> Result<Self, Failure> {
        let (mut params, mut range) = match (&common.preset, &common.config) {
            (_, Some(path)) => ConverterParams::from_file(path)?,
            (Some(name), None) => ConverterParams::preset(name)?,
            (None, None) => ConverterParams::preset("table1")?,
        };
        if let Some(u) = common.uacv {
            params = params.with_u_acv(u);
        }
        if let Some(q) = common.qmax {
            range = RequiredRange::new(q)?;
        }
        params.validate()?;
        Ok(Run { name, started: Instant::now(), params, range, settings: BTreeMap::new(), outputs: Vec::new() })
    }

    fn set(&mut self, key: &str, v: Value) {
        self.settings.insert(key.to_string(), v);
    }

    fn csv(&mut self, path: &Path, header: &[&str], rows: &[Vec<String>]) -> Outcome {
        write_csv(BufWriter::new(File::create(path)?), header, rows)?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    fn text(&mut self, path: &Path, body: &str) -> Outcome {
        std::fs::write(path, body)?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    fn finish(self, common: &Common) -> Outcome {
        let path = match (&common.manifest, self.outputs.first()) {
            (Some(p), _) => p.clone(),
            (None, Some(first)) => manifest_beside(first),
            (None, None) => return Ok(()),
        };
        let manifest = RunManifest {
            command: self.name.to_string(),
            args: std::env::args().skip(1).collect(),
            version: env!("CARGO_PKG_VERSION"),
            parameters: ConfigFile::from_params(&self.params, &self.range),
            settings: self.settings,
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
            wall_clock_s: self.started.elapsed().as_secs_f64(),
        };
        let body = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Usage(e.to_string()))?;
        std::fs::write(path, body + "\n")?;
        Ok(())
    }
}

fn manifest_beside(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    path.with_file_name(format!("{stem}.manifest.json"))
}

fn angle(s: &str, deg: bool) -> Result<f64, Failure> {
    let v = parse_angle_expr(s).map_err(Failure::Usage)?;
    Ok(if deg { v.to_radians() } else { v })
}

fn point(i: f64, phi: &str, deg: bool) -> Result<OperatingPoint, Failure> {
    Ok(OperatingPoint::new(i, wrap_angle(angle(phi, deg)?))?)
}

fn schemes(names: &[String]) -> Result<Vec<Scheme>, Failure> {
    if names.is_empty() {
        return Ok(vec![Scheme::Direct, Scheme::IndirectClosedLoop, Scheme::ImprovedDirect]);
    }
    let mut out: Vec<Scheme> = Vec::new();
    for n in names {
        let s: Scheme = n.parse()?;
        if !out.contains(&s) {
            out.push(s);
        }
    }
    Ok(out)
}

fn analytic_only(list: &[Scheme]) -> Outcome {
    match list.iter().find(|s| matches!(s, Scheme::DirectCvcOnly | Scheme::DirectCcscOnly)) {
        Some(s) => Err(Failure::Core(Error::NoAnalytic(*s))),
        None => Ok(()),
    }
}

fn scheme_names(list: &[Scheme]) -> Value {
    json!(list.iter().map(|s| s.name()).collect::<Vec<_>>())
}

/// Side-by-side table: shared leading columns, then each scheme's remaining columns.
fn wide(header: &[&str], shared: usize, tables: &[(Scheme, Vec<Vec<String>>)]) -> (Vec<String>, Vec<Vec<String>>) {
    if tables.len() == 1 {
        return (header.iter().map(|h| h.to_string()).collect(), tables[0].1.clone());
    }
    let mut head: Vec<String> = header[..shared].iter().map(|h| h.to_string()).collect();
    for (s, _) in tables {
        head.extend(header[shared..].iter().map(|h| format!("{}:{h}", s.name())));
    }
    let rows = (0..tables[0].1.len())
        .map(|k| {
            let mut row = tables[0].1[k][..shared].to_vec();
            for (_, t) in tables {
                row.extend(t[k][shared..].iter().cloned());
            }
            row
        })
        .collect();
    (head, rows)
}

fn header_refs(h: &[String]) -> Vec<&str> {
    h.iter().map(String::as_str).collect()
}

fn cmd_point(common: &Common, names: &[String], i: f64, phi: &str) -> Outcome {
    let mut run = Run::new("point", common)?;
    let list = schemes(names)?;
    analytic_only(&list)?;
    let pt = point(i, phi, common.deg)?;
    run.set("schemes", scheme_names(&list));
    run.set("i_ac_pu", json!(pt.i_ac_pu));
    run.set("phi_rad", json!(pt.phi));
    let mut columns: Vec<Vec<(&'static str, f64)>> = Vec::new();
    for &s in &list {
        let r = waveform::evaluate_point(s, &run.params, &pt, DEFAULT_SAMPLES)?;
        let (p, q) = pq_of(&pt);
        let mut rec = r.solution.record();
        rec.extend([
            ("f_peak", r.margin.f_peak),
            ("f_valley", r.margin.f_valley),
            ("delta_f_margin", r.margin.delta_f_margin),
            ("cap_peak_pu", r.cap_peak_pu),
            ("cap_dc_pu", r.cap_dc_pu),
            ("p_pu", p),
            ("q_pu", q),
        ]);
        columns.push(rec);
    }
    let mut header = vec!["field".to_string()];
    header.extend(list.iter().map(|s| s.name().to_string()));
    let rows: Vec<Vec<String>> = (0..columns[0].len())
        .map(|k| {
            let mut row = vec![columns[0][k].0.to_string()];
            row.extend(columns.iter().map(|c| g9(c[k].1)));
            row
        })
        .collect();
    let h = header_refs(&header);
    write_csv(std::io::stdout().lock(), &h, &rows)?;
    if let Some(out) = &common.out {
        run.csv(out, &h, &rows)?;
    }
    run.finish(common)
}

fn cmd_boundary(common: &Common, names: &[String], dphi: &str) -> Outcome {
    let mut run = Run::new("boundary", common)?;
    let list = schemes(names)?;
    analytic_only(&list)?;
    let dphi = angle(dphi, common.deg)?;
    run.set("schemes", scheme_names(&list));
    run.set("dphi_rad", json!(dphi));
    let scanner = Scanner::from_env();
    let mut tables = Vec::new();
    let mut any_ok = false;
    let mut chart = Vec::new();
    for &s in &list {
        let scan = region::scan_boundary_with(&scanner, &run.params, s, &run.range, dphi)?;
        let failed = scan.records.iter().filter(|r| !r.ok()).count();
        any_ok |= failed < scan.records.len();
        match scan.min_margin() {
            Some(m) => println!(
                "scheme={} rows={} failed={} min_margin={} at_phi={} at_i={}",
                s.name(),
                scan.records.len(),
                failed,
                g9(m.delta_f_margin),
                g9(m.phi),
                g9(m.i_ac_pu)
            ),
            None => println!("scheme={} rows=0", s.name()),
        }
        chart.push((s.name().to_string(), scan.records.iter().map(|r| (r.phi, r.delta_f_margin)).collect()));
        tables.push((s, scan.rows()));
    }
    let (header, rows) = wide(&BOUNDARY_HEADER, 2, &tables);
    if let Some(out) = &common.out {
        run.csv(out, &header_refs(&header), &rows)?;
    }
    if let Some(svg) = &common.svg {
        run.text(svg, &svg_lines("Boundary margin", "phi (rad)", "delta F margin", &chart))?;
    }
    run.finish(common)?;
    if any_ok {
        Ok(())
    } else {
        Err(Failure::Core(Error::NoConvergence {
            block: "boundary scan",
            iterations: 0,
            residual: f64::NAN,
            residuals: Vec::new(),
            iterate: Vec::new(),
        }))
    }
}

fn cmd_region(common: &Common, names: &[String], dphi: &str, di: f64) -> Outcome {
    let mut run = Run::new("region", common)?;
    let list = schemes(names)?;
    analytic_only(&list)?;
    let dphi = angle(dphi, common.deg)?;
    run.set("schemes", scheme_names(&list));
    run.set("dphi_rad", json!(dphi));
    run.set("di_pu", json!(di));
    let scanner = Scanner::from_env();
    let required = region::required_region(&run.range, dphi);
    let mut tables = Vec::new();
    let mut chart = vec![(
        "required".to_string(),
        required.records.iter().map(|&(phi, i)| pq_of(&OperatingPoint { i_ac_pu: i, phi })).collect(),
    )];
    let mut first_area = None;
    for &s in &list {
        let reg = region::scan_region_with(&scanner, &run.params, s, &run.range, dphi, di)?;
        let first = *first_area.get_or_insert(reg.area);
        println!(
            "scheme={} area={} required_area={} ratio_to_required={} ratio_to_{}={}",
            s.name(),
            g9(reg.area),
            g9(required.area),
            g9(reg.area / required.area),
            list[0].name(),
            g9(reg.area / first)
        );
        chart.push((
            s.name().to_string(),
            reg.records.iter().map(|&(phi, i)| pq_of(&OperatingPoint { i_ac_pu: i, phi })).collect(),
        ));
        tables.push((s, reg.rows()));
    }
    let (header, rows) = wide(&REGION_HEADER, 1, &tables);
    if let Some(out) = &common.out {
        run.csv(out, &header_refs(&header), &rows)?;
    }
    if let Some(svg) = &common.svg {
        run.text(svg, &svg_lines("Linear PQ region", "P (p.u.)", "Q (p.u.)", &chart))?;
    }
    run.finish(common)
}

fn sizing_rows(
    common: &Common,
    run: &mut Run,
    list: &[Scheme],
    solve: impl Fn(&Scanner, &ConverterParams, Scheme, &RequiredRange) -> mmc_modlab::Result<region::SizingResult>,
) -> Outcome {
    let scanner = Scanner::from_env();
    let mut rows = Vec::new();
    for &s in list {
        let r = solve(&scanner, &run.params, s, &run.range)?;
        println!(
            "scheme={} u_msacv_pu={} c_sm_required_f={} e_req_s={} worst_phi={} worst_i={}",
            s.name(),
            g9(r.u_msacv_pu),
            g9(r.c_sm_required),
            g9(r.e_req_at_solution),
            g9(r.worst_point.0),
            g9(r.worst_point.1)
        );
        rows.push(r.row(s));
    }
    if let Some(out) = &common.out {
        run.csv(out, &SIZING_HEADER, &rows)?;
    }
    Ok(())
}

fn cmd_msacv(common: &Common, names: &[String], tol: f64) -> Outcome {
    let mut run = Run::new("msacv", common)?;
    let list = schemes(names)?;
    analytic_only(&list)?;
    run.set("schemes", scheme_names(&list));
    run.set("tol", json!(tol));
    sizing_rows(common, &mut run, &list, |sc, p, s, r| region::msacv_with(sc, p, s, r, tol))?;
    run.finish(common)
}

fn cmd_sizecap(common: &Common, names: &[String], peak_limit: f64, tol: f64) -> Outcome {
    let mut run = Run::new("sizecap", common)?;
    let list = schemes(names)?;
    analytic_only(&list)?;
    run.set("schemes", scheme_names(&list));
    run.set("peak_limit_pu", json!(peak_limit));
    run.set("tol", json!(tol));
    sizing_rows(common, &mut run, &list, |sc, p, s, r| region::size_energy_storage_with(sc, p, s, r, peak_limit, tol))?;
    run.finish(common)
}

/// Series CSV for the last `periods` recorded periods.
fn tail(series: &SimSeries, periods: usize) -> SimSeries {
    let keep = (periods * series.samples_per_period).min(series.samples.len());
    SimSeries { samples: series.samples[series.samples.len() - keep..].to_vec(), ..series.clone() }
}

fn write_series(run: &mut Run, path: &Path, series: &SimSeries) -> Outcome {
    let mut w = BufWriter::new(File::create(path)?);
    simulator::write_series_csv(series, &mut w)?;
    w.flush()?;
    run.outputs.push(path.to_path_buf());
    Ok(())
}

fn delta_table(scheme: Scheme, params: &ConverterParams, pt: &OperatingPoint, m: &ExtractedMetrics) -> Outcome {
    let (p, q) = pq_of(pt);
    let mut rows: Vec<(&str, f64, f64)> = vec![
        ("i_ac_pu", m.i_ac_pu[0], pt.i_ac_pu),
        ("i_ac_angle", m.i_ac_angle[0], -pt.phi),
        ("p_pu", m.p_pu, p),
        ("q_pu", m.q_pu, q),
    ];
    let analytic = !matches!(scheme, Scheme::DirectCvcOnly | Scheme::DirectCcscOnly);
    if analytic {
        let sol = steady_state::solve(scheme, params, pt)?;
        let ev = RwfEvaluator::new(scheme, params, &sol)?;
        let margin = ev.margin(params.period(), DEFAULT_SAMPLES)?;
        let cap = cap_voltage_report(scheme, params, &sol)?;
        rows.extend([
            ("k_cir", m.k_cir[0], sol.k_cir),
            ("cap_dc_pu", m.cap_dc_pu[0][0], cap.dc),
            ("cap_peak_pu", m.cap_peak_pu[0][0], cap.peak),
            ("f_peak", m.margin.f_peak, margin.f_peak),
            ("f_valley", m.margin.f_valley, margin.f_valley),
            ("delta_f_margin", m.margin.delta_f_margin, margin.delta_f_margin),
        ]);
        println!("rwf_gap={}", g9(m.rwf_gap(&ev, params.period())?));
    } else {
        rows.extend([
            ("cap_dc_pu", m.cap_dc_pu[0][0], f64::NAN),
            ("cap_peak_pu", m.cap_peak_pu[0][0], f64::NAN),
            ("delta_f_margin", m.margin.delta_f_margin, f64::NAN),
        ]);
    }
    let table: Vec<Vec<String>> = rows.iter().map(|&(n, s, a)| vec![n.to_string(), g9(s), g9(a), g9(s - a)]).collect();
    write_csv(std::io::stdout().lock(), &["metric", "simulated", "analytic", "delta"], &table)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    common: &Common,
    scheme: &str,
    i: f64,
    phi: &str,
    openloop: bool,
    periods: usize,
    record_periods: usize,
) -> Outcome {
    let mut run = Run::new("simulate", common)?;
    let scheme: Scheme = scheme.parse()?;
    let pt = point(i, phi, common.deg)?;
    let mut cfg = ControllerConfig::new(&run.params, scheme, pt);
    if openloop {
        cfg = cfg.open_loop();
    }
    let keep = record_periods.max(2);
    let opts = SimOptions::periods(&run.params, periods).keep_last(&run.params, keep);
    run.set("scheme", json!(scheme.name()));
    run.set("i_ac_pu", json!(pt.i_ac_pu));
    run.set("phi_rad", json!(pt.phi));
    run.set("open_loop", json!(openloop));
    run.set("controller", serde_json::to_value(cfg).map_err(|e| Failure::Usage(e.to_string()))?);
    run.set("options", serde_json::to_value(opts).map_err(|e| Failure::Usage(e.to_string()))?);
    let series = simulator::simulate_with(&run.params, &cfg, &opts)?;
    let m = simulator::extract_metrics(&series, 1)?;
    println!("scheme={} periods={} drift={}", scheme.name(), periods, g9(m.drift));
    if openloop {
        println!(
            "current_error={} angle_error_rad={}",
            g9((m.i_ac_pu[0] - pt.i_ac_pu).abs() / pt.i_ac_pu.max(f64::MIN_POSITIVE)),
            g9(wrap_angle(m.i_ac_angle[0] + pt.phi).abs())
        );
    }
    delta_table(scheme, &run.params, &pt, &m)?;
    let shown = tail(&series, record_periods.max(1));
    if let Some(out) = &common.out {
        write_series(&mut run, out, &shown)?;
    }
    if let Some(svg) = &common.svg {
        let up = shown.samples.iter().map(|s| (s.state.t, s.f[0][0])).collect();
        let low = shown.samples.iter().map(|s| (s.state.t, s.f[0][1])).collect();
        let chart = [("f_ap".to_string(), up), ("f_an".to_string(), low)];
        run.text(svg, &svg_lines("Measured insertion index, phase a", "t (s)", "f", &chart))?;
    }
    run.finish(common)
}

fn cmd_step(common: &Common, scheme: &str, from: &str, to: &str, step_period: usize, periods: usize) -> Outcome {
    let mut run = Run::new("step", common)?;
    let scheme: Scheme = scheme.parse()?;
    let (fi, fphi) = parse_pair(from).map_err(Failure::Usage)?;
    let (ti, tphi) = parse_pair(to).map_err(Failure::Usage)?;
    let a = point(fi, &fphi, common.deg)?;
    let b = point(ti, &tphi, common.deg)?;
    let t1 = run.params.period();
    run.set("scheme", json!(scheme.name()));
    run.set("from", json!([a.i_ac_pu, a.phi]));
    run.set("to", json!([b.i_ac_pu, b.phi]));
    run.set("step_period", json!(step_period));
    run.set("periods", json!(periods));
    let r = simulator::simulate_step(&run.params, scheme, a, b, step_period as f64 * t1, periods as f64 * t1)?;
    println!(
        "scheme={} settled={} settling_time_s={} max_p_excursion={} max_q_excursion={} max_dc_excursion={}",
        scheme.name(),
        r.settled,
        r.settling_time.map(g9).unwrap_or_else(|| "none".into()),
        g9(r.max_p_excursion),
        g9(r.max_q_excursion),
        g9(r.max_dc_excursion)
    );
    println!(
        "final_p_error={} final_q_error={} final_dc_error={} band={}",
        g9(r.final_p_error),
        g9(r.final_q_error),
        g9(r.final_dc_error),
        g9(STEP_BAND)
    );
    // the axis that is not stepped must stay inside the decoupling band
    let ((pa, qa), (pb, qb)) = (pq_of(&a), pq_of(&b));
    let (axis, excursion) =
        if (pb - pa).abs() >= (qb - qa).abs() { ("q", r.max_q_excursion) } else { ("p", r.max_p_excursion) };
    println!(
        "decoupling axis={axis} excursion={} band={} {}",
        g9(excursion),
        g9(DECOUPLING_BAND),
        if excursion < DECOUPLING_BAND { "PASS" } else { "FAIL" }
    );
    if let Some(out) = &common.out {
        write_series(&mut run, out, &r.series)?;
    }
    if let Some(svg) = &common.svg {
        let p = r.series.samples.iter().map(|s| (s.state.t, s.p_pu)).collect();
        let q = r.series.samples.iter().map(|s| (s.state.t, s.q_pu)).collect();
        let chart = [("p".to_string(), p), ("q".to_string(), q)];
        run.text(svg, &svg_lines("Step response", "t (s)", "p.u.", &chart))?;
    }
    run.finish(common)
}

fn cmd_compare(common: &Common, i: f64, phi: &str) -> Outcome {
    let mut run = Run::new("compare", common)?;
    let pt = point(i, phi, common.deg)?;
    run.set("i_ac_pu", json!(pt.i_ac_pu));
    run.set("phi_rad", json!(pt.phi));
    let gap = waveform::equivalence_gap(&run.params, &pt)?;
    let a = waveform::evaluate_point(Scheme::IndirectClosedLoop, &run.params, &pt, DEFAULT_SAMPLES)?;
    let b = waveform::evaluate_point(Scheme::ImprovedDirect, &run.params, &pt, DEFAULT_SAMPLES)?;
    println!(
        "equivalence_gap={} tol={} {}",
        g9(gap),
        g9(EQUIVALENCE_TOL),
        if gap < EQUIVALENCE_TOL { "PASS" } else { "FAIL" }
    );
    println!(
        "cap_dc_pu indirect={} improved-direct={} cap_peak_pu indirect={} improved-direct={}",
        g9(a.cap_dc_pu),
        g9(b.cap_dc_pu),
        g9(a.cap_peak_pu),
        g9(b.cap_peak_pu)
    );
    if let Some(out) = &common.out {
        let rows = vec![
            vec!["equivalence_gap".into(), g9(gap), g9(gap)],
            vec!["delta_f_margin".into(), g9(a.margin.delta_f_margin), g9(b.margin.delta_f_margin)],
            vec!["cap_dc_pu".into(), g9(a.cap_dc_pu), g9(b.cap_dc_pu)],
            vec!["cap_peak_pu".into(), g9(a.cap_peak_pu), g9(b.cap_peak_pu)],
        ];
        run.csv(out, &["field", "indirect", "improved-direct"], &rows)?;
    }
    run.finish(common)
}

fn dispatch(cli: Cli) -> Outcome {
    match &cli.command {
        Command::Point { common, schemes, i, phi } => cmd_point(common, schemes, *i, phi),
        Command::Boundary { common, schemes, dphi } => cmd_boundary(common, schemes, dphi),
        Command::Region { common, schemes, dphi, di } => cmd_region(common, schemes, dphi, *di),
        Command::Msacv { common, schemes, tol } => cmd_msacv(common, schemes, *tol),
        Command::Sizecap { common, schemes, peak_limit, tol } => cmd_sizecap(common, schemes, *peak_limit, *tol),
        Command::Simulate { common, scheme, i, phi, openloop, periods, record_periods } => {
            cmd_simulate(common, scheme, *i, phi, *openloop, *periods, *record_periods)
        }
        Command::Step { common, scheme, from, to, step_period, periods } => {
            cmd_step(common, scheme, from, to, *step_period, *periods)
        }
        Command::Compare { common, i, phi } => cmd_compare(common, *i, phi),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
