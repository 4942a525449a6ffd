use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use wildcensus::census::{self, DedupParams, ImageReview};
use wildcensus::datastore::{self, class_image_counts, Dataset, SplitName, SplitSet, SplitSpec};
use wildcensus::eval::{self, default_grid, EvalConfig, EvalReport};
use wildcensus::geometry::CameraRegistry;
use wildcensus::planner::{self, GridSpec, PlanParams, StudyArea, SurveyPlan};
use wildcensus::review::{self, ReviewService};
use wildcensus::synth::{self, ScenarioSpec};
use wildcensus::{report, Class, Enu, Geodetic};

use crate::{out_dir, Cli, Command, RUN_SCHEMA};

#[derive(Serialize)]
struct RunEcho<'a> {
    schema: &'static str,
    version: &'static str,
    command: &'a Command,
    threads: Option<usize>,
}

fn write_echo(dir: &Path, cli: &Cli) -> Result<()> {
    let echo = RunEcho {
        schema: RUN_SCHEMA,
        version: env!("CARGO_PKG_VERSION"),
        command: &cli.command,
        threads: cli.threads,
    };
    write_file(
        &dir.join("run.json"),
        &(serde_json::to_string_pretty(&echo)? + "\n"),
    )
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub(crate) fn cameras(path: &Option<PathBuf>) -> Result<CameraRegistry> {
    let mut reg = CameraRegistry::with_defaults();
    if let Some(p) = path {
        let text = read_file(p)?;
        reg.merge(
            CameraRegistry::parse(&text)
                .with_context(|| format!("camera config {}", p.display()))?,
        );
    }
    Ok(reg)
}

fn ensure_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        bail!("--{name} must be in [0, 1], got {v}");
    }
    Ok(())
}

fn parse_pair(s: &str, sep: char, what: &str) -> Result<(f64, f64)> {
    let (a, b) = s
        .split_once(sep)
        .with_context(|| format!("{what}: expected A{sep}B, got {s:?}"))?;
    let a: f64 = a.trim().parse().with_context(|| format!("{what}: {a:?}"))?;
    let b: f64 = b.trim().parse().with_context(|| format!("{what}: {b:?}"))?;
    Ok((a, b))
}

pub(crate) fn dispatch(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be >= 1");
        }
        // ignore a second initialisation (tests call run() repeatedly)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match &cli.command {
        Command::Plan(a) => plan(cli, a),
        Command::Ingest(a) => ingest(cli, a),
        Command::Eval(a) => eval_cmd(cli, a, false),
        Command::Sweep(a) => eval_cmd(cli, a, true),
        Command::Census(a) => census_cmd(cli, a),
        Command::Serve(a) => crate::server::serve(a),
        Command::Report(a) => report_cmd(cli, a),
        Command::Synth(a) => synth_cmd(cli, a),
    }
}

fn plan(_cli: &Cli, a: &crate::PlanArgs) -> Result<()> {
    ensure_unit("coverage", a.coverage)?;
    let (cell_ns, cell_ew) = parse_pair(&a.grid, 'x', "--grid")?;
    let (origin, area) = match (&a.area, &a.rect) {
        (Some(path), None) => {
            let ring = planner::parse_geojson_polygon(&read_file(path)?)?;
            let (o, area) = planner::project_ring(&ring)?;
            (Some(o), area)
        }
        (None, Some(rect)) => {
            let (w, h) = parse_pair(rect, 'x', "--rect")?;
            let origin = a
                .origin
                .as_deref()
                .map(|s| parse_pair(s, ',', "--origin").map(|(lat, lon)| Geodetic::new(lat, lon)))
                .transpose()?;
            let (hw, hh) = (w / 2.0, h / 2.0);
            let ring = vec![
                Enu::new(-hw, -hh),
                Enu::new(hw, -hh),
                Enu::new(hw, hh),
                Enu::new(-hw, hh),
            ];
            (origin, StudyArea::new(ring)?)
        }
        _ => bail!("give the study area with --area FILE or --rect WxH"),
    };
    let params = PlanParams {
        grid: GridSpec {
            cell_ns,
            cell_ew,
            orientation: a.orientation,
        },
        min_transect: a.min_transect,
        coverage: a.coverage,
        swath: a.swath,
        seed: a.seed,
        max_route_length: a.max_route,
        ..PlanParams::default()
    };
    let plan = planner::plan_survey(&area, &params, origin)?;
    let out = a.out.clone().unwrap_or_else(|| out_dir(&None, "plan.json"));
    write_file(&out, &plan.to_json())?;
    let violations = planner::validate_schedule(&plan);
    for v in &violations {
        tracing::warn!("schedule: {v:?}");
    }
    println!(
        "{}: {} transects in {} routes, coverage {:.4} ({} schedule warnings)",
        out.display(),
        plan.transects.len(),
        plan.routes.len(),
        plan.achieved_coverage,
        violations.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct IngestSummary {
    schema: &'static str,
    images: usize,
    census_eligible: usize,
    with_pose: usize,
    transects: usize,
    labels: Option<usize>,
    label_images_by_class: Option<BTreeMap<Class, usize>>,
    detections: Option<usize>,
    splits: Option<PathBuf>,
    export: Option<datastore::ExportSummary>,
    tasks_created: Option<usize>,
}

fn ingest(cli: &Cli, a: &crate::IngestArgs) -> Result<()> {
    ensure_unit("tau", a.tau)?;
    let ds = Dataset::load(&a.manifest, cameras(&a.cameras)?)?;
    let labels = a.labels.as_ref().map(|p| ds.load_labels(p)).transpose()?;
    let dets = a
        .detections
        .as_ref()
        .map(|p| ds.load_detections(p))
        .transpose()?;
    let out = out_dir(&a.out, "ingest");
    let mut summary = IngestSummary {
        schema: "wildcensus-ingest/1",
        images: ds.len(),
        census_eligible: ds.images().iter().filter(|r| r.census_eligible).count(),
        with_pose: ds.images().iter().filter(|r| r.pose.is_some()).count(),
        transects: ds
            .images()
            .iter()
            .map(|r| r.transect_id)
            .collect::<std::collections::BTreeSet<_>>()
            .len(),
        labels: labels.as_ref().map(Vec::len),
        label_images_by_class: labels.as_deref().map(class_image_counts),
        detections: dets.as_ref().map(Vec::len),
        splits: None,
        export: None,
        tasks_created: None,
    };
    if a.splits {
        let labels = labels.as_deref().expect("clap requires labels");
        let set = datastore::make_splits(ds.images(), labels, &SplitSpec::published(), a.seed)?;
        let path = out.join("splits.json");
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        set.save(&path)?;
        if let Some(dir) = &a.export {
            summary.export = Some(datastore::export_training_set(
                set.get(SplitName::Train),
                labels,
                &ds,
                dir,
            )?);
        }
        summary.splits = Some(path);
    }
    if a.tasks {
        let store = a
            .store
            .as_ref()
            .context("--tasks needs --store or WILDCENSUS_STORE")?;
        let ids: Vec<&str> = ds.images().iter().map(|r| r.image_id.as_str()).collect();
        let candidates =
            review::seed_candidates(dets.as_deref().unwrap_or(&[]), a.tau, ids.iter().copied())?;
        let svc = ReviewService::open(store, review::DEFAULT_LEASE_TTL)?;
        // manifest order, not id order
        let tasks = ids
            .iter()
            .map(|id| (id.to_string(), candidates[*id].clone()));
        summary.tasks_created = Some(svc.create_tasks(tasks, crate::server::now())?);
        svc.snapshot()?;
    }
    write_file(
        &out.join("ingest.json"),
        &(serde_json::to_string_pretty(&summary)? + "\n"),
    )?;
    write_echo(&out, cli)?;
    println!(
        "{} images ({} census eligible) over {} transects",
        summary.images, summary.census_eligible, summary.transects
    );
    Ok(())
}

fn eval_config(a: &crate::EvalArgs) -> Result<EvalConfig> {
    ensure_unit("iou", a.iou)?;
    if !(a.grid_step > 0.0 && a.grid_step <= 1.0) {
        bail!("--grid-step must be in (0, 1], got {}", a.grid_step);
    }
    let classes = a
        .classes
        .iter()
        .map(|s| s.parse::<Class>().map_err(anyhow::Error::msg))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalConfig {
        iou_threshold: a.iou,
        classes,
        grid: default_grid(a.grid_step),
        ..EvalConfig::default()
    })
}

fn run_eval(a: &crate::EvalArgs) -> Result<EvalReport> {
    let config = eval_config(a)?;
    let ds = Dataset::load(&a.manifest, cameras(&a.cameras)?)?;
    let labels = ds.load_labels(&a.labels)?;
    let dets = ds.load_detections(&a.detections)?;
    let ids: Vec<String> = match (&a.splits, &a.split) {
        (Some(path), Some(name)) => {
            let set = SplitSet::load(path)?;
            let split: SplitName = name.parse().map_err(anyhow::Error::msg)?;
            let ids: Vec<String> = set.get(split).all_ids().cloned().collect();
            if let Some(id) = ids.iter().find(|id| ds.image(id).is_none()) {
                bail!("split {name} lists {id:?}, which is not in the manifest");
            }
            ids
        }
        _ => ds.images().iter().map(|r| r.image_id.clone()).collect(),
    };
    let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
    Ok(eval::evaluate(&ids, &dets, &labels, &config)?)
}

fn eval_cmd(cli: &Cli, a: &crate::EvalArgs, sweep_only: bool) -> Result<()> {
    let report = run_eval(a)?;
    let out = out_dir(&a.out, if sweep_only { "sweep" } else { "eval" });
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    if sweep_only {
        write_file(&out.join("sweep.csv"), &report::sweep_csv(&report))?;
        if a.svg {
            write_file(&out.join("sweep.svg"), &report::sweep_svg(&report))?;
        }
    } else {
        report::write_report(&out, &report, a.svg)
            .with_context(|| format!("writing {}", out.display()))?;
    }
    write_echo(&out, cli)?;
    println!(
        "mAP@{} = {:.4} at confidence {} over {} images (TP {}, FP {}, FN {})",
        report.config.iou_threshold,
        report.map,
        report.optimal_confidence,
        report.images,
        report.tp,
        report.fp,
        report.fn_count
    );
    Ok(())
}

fn census_cmd(cli: &Cli, a: &crate::CensusArgs) -> Result<()> {
    let ds = Dataset::load(&a.manifest, cameras(&a.cameras)?)?;
    let plan = SurveyPlan::from_json(&read_file(&a.plan)?)
        .with_context(|| format!("parsing {}", a.plan.display()))?;
    let reviews: Vec<ImageReview> = match (&a.verdicts, &a.store) {
        (Some(path), _) => {
            let mut by_image: BTreeMap<String, Vec<review::Verdict>> = BTreeMap::new();
            for v in synth::read_verdicts(path)? {
                by_image.entry(v.image_id.clone()).or_default().push(v);
            }
            by_image
                .into_iter()
                .map(|(image_id, reviews)| ImageReview {
                    image_id,
                    reviews,
                    adjudication: None,
                })
                .collect()
        }
        (None, Some(store)) => {
            let svc = ReviewService::open(store, review::DEFAULT_LEASE_TTL)?;
            svc.state().tasks.values().map(ImageReview::from).collect()
        }
        (None, None) => bail!("give --verdicts FILE or --store DIR"),
    };
    let params = DedupParams {
        radius: a.radius,
        time_window: a.window,
    };
    let (report, conflicts) = census::run_census(&reviews, &ds, &plan, &params)?;
    let out = out_dir(&a.out, "census");
    census::write_outputs(&out, &report, &conflicts)?;
    write_echo(&out, cli)?;
    let e = &report.estimate;
    println!(
        "{} individuals from {} sightings over {:.3} km2 surveyed; {} conflict images",
        e.unique_count,
        report.sightings,
        e.surveyed_area_m2 / 1e6,
        report.conflicts
    );
    for (class, e) in &report.per_class {
        println!(
            "  {class}: {} individuals, density {:.4}/km2, abundance {:.1}",
            e.unique_count, e.density_per_km2, e.abundance
        );
    }
    Ok(())
}

fn report_cmd(cli: &Cli, a: &crate::ReportArgs) -> Result<()> {
    let report: EvalReport = serde_json::from_str(&read_file(&a.report)?)
        .with_context(|| format!("parsing {}", a.report.display()))?;
    if report.schema != eval::REPORT_SCHEMA {
        bail!(
            "{}: schema {:?}, expected {:?}",
            a.report.display(),
            report.schema,
            eval::REPORT_SCHEMA
        );
    }
    let out = out_dir(&a.out, "report");
    for (name, text) in report::render_all(&report, a.svg) {
        write_file(&out.join(name), &text)?;
    }
    write_echo(&out, cli)?;
    println!("rendered {}", out.display());
    Ok(())
}

fn synth_cmd(cli: &Cli, a: &crate::SynthArgs) -> Result<()> {
    let mut spec: ScenarioSpec = match &a.spec {
        Some(p) => serde_json::from_str(&read_file(p)?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None if a.large => ScenarioSpec::large(),
        None => ScenarioSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(k) = a.deer {
        spec.deer = k;
    }
    let sc = synth::generate(&spec)?;
    let out = out_dir(&a.out, "synth");
    synth::write_scenario(&out, &sc)?;
    write_echo(&out, cli)?;
    println!(
        "{}: {} images, {} labels, {} detections, {} deer",
        out.display(),
        sc.images.len(),
        sc.labels.len(),
        sc.detections.len(),
        sc.deer_count
    );
    Ok(())
}
