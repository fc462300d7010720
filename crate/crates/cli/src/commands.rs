use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use rsmlqr_core::lqr::{self, AnalysisOptions, Instance, SearchConfig, Verdict};
use rsmlqr_core::{sim, DVector};

use crate::problem::{self, ProblemFile};
use crate::report::{
    self, ChecksSection, ComposedSection, CompositeSection, DesignSection, GapField, GapSection, Meta, NamedDesign,
    Num, Report, StageTiming,
};
use crate::{CheckArgs, CheckKind, Cli, CliError, Command, Controller, SearchArgs, SimulateArgs};
use crate::{EXIT_COMPOSITIONAL, EXIT_INCONCLUSIVE, EXIT_NOT_COMPOSITIONAL};

pub fn dispatch(cli: &Cli) -> Result<i32, CliError> {
    if !(cli.tol.is_finite() && cli.tol > 0.0) {
        return Err(CliError::Usage(format!("--tol must be positive and finite, got {}", cli.tol)));
    }
    match &cli.command {
        Command::Compose(a) => compose(&a.file, cli.tol),
        Command::Lqr(a) => lqr_designs(&a.file, cli.tol),
        Command::Check(a) => check(a, cli.tol),
        Command::Simulate(a) => simulate(a),
        Command::Search(a) => search(a, cli.tol),
    }
}

fn load(path: &Path) -> Result<(ProblemFile, Instance, String), CliError> {
    let (file, bytes) = problem::parse_problem(path)?;
    let inst = file.to_instance()?;
    Ok((file, inst, report::digest(&bytes)))
}

fn names(file: &ProblemFile) -> [&str; 2] {
    [&file.subsystems[0].name, &file.subsystems[1].name]
}

fn print(text: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|source| CliError::Io {
            path: "<stdout>".into(),
            source,
        })
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses `"1,-0.5,2"`; `None` gives all ones.
pub fn parse_vector(text: Option<&str>, n: usize) -> Result<DVector<f64>, CliError> {
    let Some(text) = text else {
        return Ok(DVector::from_element(n, 1.0));
    };
    let values = text
        .split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| CliError::Usage(format!("--x0: '{t}' is not a finite number")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() != n {
        return Err(CliError::Usage(format!(
            "--x0 has {} entries but the composite system has {n} states",
            values.len()
        )));
    }
    Ok(DVector::from_vec(values))
}

fn compose(path: &Path, tol: f64) -> Result<i32, CliError> {
    let (file, inst, digest) = load(path)?;
    let sys = rsmlqr_core::rsm::compose_open_loop(&inst.s1, &inst.s2, &inst.pattern)?;
    let cost = rsmlqr_core::rsm::compose_cost(&inst.w1, &inst.w2, &sys.kmat)?;
    let rep = Report {
        input_digest: digest,
        composite: Some(CompositeSection::new(&sys, &cost, names(&file))),
        lqr_direct: None,
        lqr_composed: None,
        checks: None,
        gap: GapField::Omitted,
        meta: Meta::new(tol),
    };
    print(&rep.to_json())?;
    Ok(0)
}

fn composed_section(file: &ProblemFile, an: &lqr::Analysis) -> ComposedSection {
    let [n1, n2] = names(file);
    ComposedSection {
        subsystems: vec![
            NamedDesign {
                name: n1.to_string(),
                design: (&an.design1).into(),
            },
            NamedDesign {
                name: n2.to_string(),
                design: (&an.design2).into(),
            },
        ],
        p_bar: (&an.pbar).into(),
        f: (&an.report.gain_composed).into(),
    }
}

fn lqr_designs(path: &Path, tol: f64) -> Result<i32, CliError> {
    let (file, inst, digest) = load(path)?;
    let an = lqr::analyze(&inst, &AnalysisOptions { tol, x0: None })?;
    let rep = Report {
        input_digest: digest,
        composite: Some(CompositeSection::new(&an.composite, &an.cost, names(&file))),
        lqr_direct: Some((&an.direct).into()),
        lqr_composed: Some(composed_section(&file, &an)),
        checks: None,
        gap: GapField::Omitted,
        meta: Meta::new(tol),
    };
    print(&rep.to_json())?;
    Ok(0)
}

fn exit_code(v: Verdict) -> i32 {
    match v {
        Verdict::Compositional => EXIT_COMPOSITIONAL,
        Verdict::NotCompositional => EXIT_NOT_COMPOSITIONAL,
        Verdict::Inconclusive => EXIT_INCONCLUSIVE,
    }
}

struct Timer {
    enabled: bool,
    last: Instant,
    stages: Vec<StageTiming>,
}

impl Timer {
    fn new(enabled: bool) -> Self {
        Timer {
            enabled,
            last: Instant::now(),
            stages: Vec::new(),
        }
    }

    fn lap(&mut self, stage: &'static str) {
        let now = Instant::now();
        self.stages.push(StageTiming {
            stage,
            seconds: Num((now - self.last).as_secs_f64()),
        });
        self.last = now;
    }

    fn finish(self) -> Option<Vec<StageTiming>> {
        self.enabled.then_some(self.stages)
    }
}

fn check(args: &CheckArgs, tol: f64) -> Result<i32, CliError> {
    let mut timer = Timer::new(args.timings);
    let (file, inst, digest) = load(&args.file)?;
    timer.lap("parse");
    let want = |k: CheckKind| args.checks.contains(&k);
    let with_gap = args.gap || args.x0.is_some();
    let x0 = if with_gap {
        Some(parse_vector(args.x0.as_deref(), inst.pattern.composite_dim())?)
    } else {
        None
    };

    if !want(CheckKind::Equivalence) {
        if with_gap {
            return Err(CliError::Usage("--gap needs the equivalence check".into()));
        }
        return check_subsystem_only(args, &file, &inst, digest, tol, timer);
    }

    let an = lqr::analyze(&inst, &AnalysisOptions { tol, x0: None })?;
    timer.lap("analyze");
    let gap = match &x0 {
        Some(x0) => {
            let g = sim::optimality_gap(
                &an.composite,
                &an.cost,
                &an.report.gain_composed,
                &an.report.gain_direct,
                x0,
            )?;
            timer.lap("gap");
            GapField::Computed(GapSection::new(x0, &g))
        }
        None => GapField::NotRequested,
    };

    let r = &an.report;
    let checks = ChecksSection::from(r);
    let verdict = r.verdict();
    let mut meta = Meta::new(tol);
    meta.timings = timer.finish();

    let t3 = &r.equivalence;
    let mut line = format!(
        "{}: deviation {} (relative {}, resolution {}), necessary condition {}, sufficient condition {}",
        report::verdict_name(verdict),
        fmt_short(t3.deviation),
        fmt_short(t3.relative_deviation),
        fmt_short(t3.resolution),
        if r.necessary.holds() { "holds" } else { "fails" },
        if r.sufficient.predicts_compositional { "holds" } else { "not met" },
    );
    if let GapField::Computed(g) = &gap {
        match g.gap {
            Some(Num(v)) => line.push_str(&format!(", gap {}", fmt_short(v))),
            None => line.push_str(", gap undefined"),
        }
    }
    let rep = Report {
        input_digest: digest,
        composite: Some(CompositeSection::new(&an.composite, &an.cost, names(&file))),
        lqr_direct: Some((&an.direct).into()),
        lqr_composed: Some(composed_section(&file, &an)),
        checks: Some(checks),
        gap,
        meta,
    };
    if let Some(out) = &args.report {
        write_file(out, &rep.to_json())?;
    }
    print(&format!("{line}\n"))?;
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    if !r.is_consistent() {
        for i in &r.inconsistencies {
            eprintln!("error: {i}");
        }
        return Err(CliError::Inconsistent(r.inconsistencies.join("; ")));
    }
    Ok(exit_code(verdict))
}

fn check_subsystem_only(
    args: &CheckArgs,
    file: &ProblemFile,
    inst: &Instance,
    digest: String,
    tol: f64,
    mut timer: Timer,
) -> Result<i32, CliError> {
    let c = lqr::subsystem_only_checks(inst, tol)?;
    let d1 = lqr::lqr_subsystem(&inst.s1, &inst.w1)?;
    let d2 = lqr::lqr_subsystem(&inst.s2, &inst.w2)?;
    timer.lap("analyze");
    let sys = rsmlqr_core::rsm::compose_open_loop(&inst.s1, &inst.s2, &inst.pattern)?;
    let cost = rsmlqr_core::rsm::compose_cost(&inst.w1, &inst.w2, &sys.kmat)?;
    let gain = rsmlqr_core::rsm::compose_gains(&d1.gain, &d2.gain, &sys.kmat)?;
    let pbar = rsmlqr_core::matkit::block_diag(d1.p(), d2.p());

    // with only one of the two conditions, only its own conclusion counts
    let verdict = match (args.checks.contains(&CheckKind::Necessary), args.checks.contains(&CheckKind::Sufficient)) {
        (true, true) => c.verdict(),
        (true, false) if !c.necessary.holds() => Verdict::NotCompositional,
        (false, true) if c.sufficient.predicts_compositional => Verdict::Compositional,
        _ => Verdict::Inconclusive,
    };
    let mut checks = ChecksSection::from(&c);
    checks.verdict = report::verdict_name(verdict);
    let mut meta = Meta::new(tol);
    meta.timings = timer.finish();
    let [n1, n2] = names(file);
    let rep = Report {
        input_digest: digest,
        composite: Some(CompositeSection::new(&sys, &cost, [n1, n2])),
        lqr_direct: None,
        lqr_composed: Some(ComposedSection {
            subsystems: vec![
                NamedDesign {
                    name: n1.to_string(),
                    design: DesignSection::from(&d1),
                },
                NamedDesign {
                    name: n2.to_string(),
                    design: DesignSection::from(&d2),
                },
            ],
            p_bar: (&pbar).into(),
            f: (&gain).into(),
        }),
        checks: Some(checks),
        gap: GapField::NotRequested,
        meta,
    };
    if let Some(out) = &args.report {
        write_file(out, &rep.to_json())?;
    }
    print(&format!(
        "{}: necessary condition {}, sufficient condition {} (composite Riccati equation not solved)\n",
        report::verdict_name(verdict),
        if c.necessary.holds() { "holds" } else { "fails" },
        if c.sufficient.predicts_compositional { "holds" } else { "not met" },
    ))?;
    Ok(exit_code(verdict))
}

fn fmt_short(x: f64) -> String {
    format!("{x:.6e}")
}

fn simulate(args: &SimulateArgs) -> Result<i32, CliError> {
    if !(args.horizon.is_finite() && args.horizon > 0.0) {
        return Err(CliError::Usage("--horizon must be positive".into()));
    }
    if !(args.step.is_finite() && args.step > 0.0) {
        return Err(CliError::Usage("--step must be positive".into()));
    }
    let (_, inst, _) = load(&args.file)?;
    let x0 = parse_vector(args.x0.as_deref(), inst.pattern.composite_dim())?;
    let an = lqr::analyze(&inst, &AnalysisOptions::default())?;
    let f = match args.controller {
        Controller::Direct => &an.report.gain_direct,
        Controller::Composed => &an.report.gain_composed,
    };
    let (a, b) = (&an.composite.acal, &an.composite.bcal);
    let acl = a + b * f;
    let traj = sim::simulate(&acl, &x0, args.horizon, args.step)?;
    print(&traj.to_csv())?;
    let w = &an.cost.qcal + f.transpose() * &an.cost.rbar * f;
    let cost = traj.quadratic_integral(&w)?;
    eprintln!("accumulated cost: {}", report::format_f64(cost));
    if traj.diverged {
        eprintln!("warning: trajectory diverged; stopped early");
    }
    Ok(0)
}

#[derive(Serialize)]
struct SearchSummary {
    seed: u64,
    trials: usize,
    threshold: Num,
    tolerance: Num,
    n_range: [usize; 2],
    m_range: [usize; 2],
    k_range: [usize; 2],
    evaluated: usize,
    skipped: usize,
    found: Vec<SearchHit>,
}

#[derive(Serialize)]
struct SearchHit {
    trial: u64,
    deviation: Num,
    relative_deviation: Num,
    verdict: &'static str,
    problem: ProblemFile,
}

fn search(args: &SearchArgs, tol: f64) -> Result<i32, CliError> {
    if !(args.threshold >= 0.0) {
        return Err(CliError::Usage("--threshold must be non-negative".into()));
    }
    let config = SearchConfig {
        n_range: (1, args.n_max),
        m_range: (1, args.m_max),
        k_range: (0, args.k_max),
        trials: args.trials,
        seed: args.seed,
        deviation_threshold: args.threshold,
        tol,
    };
    let outcome = lqr::counterexample_search(&config)?;
    let found: Vec<SearchHit> = outcome
        .found
        .iter()
        .map(|f| SearchHit {
            trial: f.trial,
            deviation: Num(f.analysis.report.equivalence.deviation),
            relative_deviation: Num(f.analysis.report.equivalence.relative_deviation),
            verdict: report::verdict_name(f.analysis.report.verdict()),
            problem: ProblemFile::from_instance(&f.instance),
        })
        .collect();
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        for hit in &found {
            let path = dir.join(format!("seed{}_trial{}.json", args.seed, hit.trial));
            write_file(&path, &(hit.problem.to_json() + "\n"))?;
        }
    }
    let summary = SearchSummary {
        seed: args.seed,
        trials: args.trials,
        threshold: Num(args.threshold),
        tolerance: Num(tol),
        n_range: [1, args.n_max],
        m_range: [1, args.m_max],
        k_range: [0, args.k_max],
        evaluated: outcome.evaluated,
        skipped: outcome.skipped,
        found,
    };
    let mut text = serde_json::to_string_pretty(&summary).expect("search summaries always serialize");
    text.push('\n');
    print(&text)?;
    Ok(0)
}
