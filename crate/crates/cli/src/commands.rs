//! One function per subcommand. All numeric output goes through
//! [`crate::output::Table`] so files are deterministic for a fixed config
//! and seed.

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use fluidtime_core::mc_oracle::{
    compare, empirical_cdf, empirical_joint_cdf, sample_quantile, simulate, Functional,
    SimulationPlan, VerificationReport,
};
use fluidtime_core::queue_dist::QueueDistributions;
use fluidtime_core::rw_dist::{erlangized_bph_representation, BphDistribution, WalkDistributions};
use fluidtime_core::toeplitz_expm::ExpmMethod;
use fluidtime_core::{ErlangClock, FluidModel, StageMatrixFamily};

use crate::config::RunConfig;
use crate::output::{fmt, Table};

/// Context shared by most commands after validation.
pub struct Prepared {
    pub cfg: RunConfig,
    pub model: FluidModel,
    pub clock: ErlangClock,
    pub method: ExpmMethod,
    pub initial_phase: usize,
}

impl Prepared {
    pub fn from_config(cfg: RunConfig) -> anyhow::Result<Self> {
        let model = cfg.build_model()?;
        let clock = cfg.build_clock()?;
        let method = cfg.expm_method(clock.stages())?;
        let initial_phase = cfg.initial_phase_index(&model)?;
        Ok(Self {
            cfg,
            model,
            clock,
            method,
            initial_phase,
        })
    }

    fn walk(&self) -> anyhow::Result<Arc<WalkDistributions>> {
        Ok(Arc::new(WalkDistributions::new(
            self.model.clone(),
            self.clock,
            self.method,
        )?))
    }

    fn queue(&self) -> anyhow::Result<QueueDistributions> {
        Ok(QueueDistributions::new(self.walk()?)?)
    }

    fn stage_or_default(&self, k: Option<usize>) -> usize {
        k.unwrap_or_else(|| self.clock.stages())
    }

    /// Pre-simulation used only to pick a sensible level range.
    fn presim(&self, functional: Functional) -> anyhow::Result<(f64, f64)> {
        let plan = SimulationPlan::new(
            self.model.clone(),
            self.clock,
            self.cfg.initial.level,
            self.initial_phase,
            10_000,
            self.cfg.mc.seed.wrapping_add(0x9E37_79B9_7F4A_7C15),
        )?;
        let summaries = simulate(&plan)?;
        let lo = sample_quantile(&summaries, functional, 0.001);
        let hi = sample_quantile(&summaries, functional, 0.999);
        let pad = 0.05 * (hi - lo).max(1e-6);
        Ok((lo - pad, hi + pad))
    }

    /// Resolve the evaluation grid: explicit config/flags win, otherwise a
    /// data-driven range around the simulated law.
    fn grid(&self, functional: Functional, nonnegative: bool) -> anyhow::Result<Vec<f64>> {
        let (x_min, x_max, points) = match self.cfg.grid {
            Some(g) => (g.x_min, g.x_max, g.points),
            None => {
                let (lo, hi) = self.presim(functional)?;
                (lo, hi, 201)
            }
        };
        if points < 2 {
            bail!("grid needs at least 2 points");
        }
        let lo = if nonnegative { x_min.max(0.0) } else { x_min };
        let hi = if nonnegative { x_max.max(lo) } else { x_max };
        let step = (hi - lo) / (points - 1) as f64;
        Ok((0..points).map(|i| lo + step * i as f64).collect())
    }
}

fn phase_headers(m: usize) -> Vec<String> {
    (1..=m).map(|i| format!("P_phase{i}")).collect()
}

/// `validate`: report the partition and drift of a parsed model.
pub fn cmd_validate(p: &Prepared) -> anyhow::Result<()> {
    let plus: Vec<String> = p
        .model
        .plus_phases()
        .iter()
        .map(|i| (i + 1).to_string())
        .collect();
    let minus: Vec<String> = p
        .model
        .minus_phases()
        .iter()
        .map(|i| (i + 1).to_string())
        .collect();
    let drift = p.model.stationary_drift()?;
    println!("phases: {}", p.model.num_phases());
    println!("up-phases (c > 0): {{{}}}", plus.join(", "));
    println!("down-phases (c < 0): {{{}}}", minus.join(", "));
    println!("stationary drift: {}", fmt(drift));
    println!(
        "clock: theta = {}, stages = {}, rate = {}",
        fmt(p.clock.theta()),
        p.clock.stages(),
        fmt(p.clock.rate())
    );
    Ok(())
}

fn family_table(model: &FluidModel, fam: &StageMatrixFamily, row_plus: bool, col_plus: bool) -> Table {
    let mut t = Table::new(&["k", "row_phase", "col_phase", "value"]);
    let np = model.n_plus();
    let row_user = |i: usize| {
        let internal = if row_plus { i } else { np + i };
        model.to_user_phase(internal) + 1
    };
    let col_user = |j: usize| {
        let internal = if col_plus { j } else { np + j };
        model.to_user_phase(internal) + 1
    };
    for k in 0..fam.len() {
        let b = fam.block(k);
        for i in 0..b.nrows() {
            for j in 0..b.ncols() {
                t.push(vec![
                    k as f64,
                    row_user(i) as f64,
                    col_user(j) as f64,
                    b[(i, j)],
                ]);
            }
        }
    }
    t
}

/// `stages`: dump the stage-split families as long-format CSVs.
pub fn cmd_stages(p: &Prepared, out: &Path) -> anyhow::Result<()> {
    let q = p.queue()?;
    let w = q.walk();
    let rm = w.return_matrices();
    let rg = w.generators();
    family_table(&p.model, &rm.psi, true, false).write(out, "psi.csv")?;
    family_table(&p.model, &rm.psi_hat, false, true).write(out, "psi_hat.csv")?;
    family_table(&p.model, &rg.u, false, false).write(out, "u.csv")?;
    family_table(&p.model, &rg.u_hat, true, true).write(out, "u_hat.csv")?;

    let mut ups = Table::new(&["m", "row_phase", "col_phase", "value"]);
    let np = p.model.n_plus();
    for (m, blk) in q.boundary_exit().upsilon.iter().enumerate() {
        for i in 0..blk.nrows() {
            for j in 0..blk.ncols() {
                ups.push(vec![
                    m as f64,
                    (p.model.to_user_phase(np + i) + 1) as f64,
                    (p.model.to_user_phase(j) + 1) as f64,
                    blk[(i, j)],
                ]);
            }
        }
    }
    ups.write(out, "upsilon.csv")?;
    println!(
        "wrote psi.csv, psi_hat.csv, u.csv, u_hat.csv, upsilon.csv to {}",
        out.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Process {
    Walk,
    Queue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Which {
    Min,
    Max,
}

/// `cdf`: level CDF curve of the walk or queue.
pub fn cmd_cdf(p: &Prepared, process: Process, k: Option<usize>, out: &Path) -> anyhow::Result<()> {
    let k = p.stage_or_default(k);
    let a = p.cfg.initial.level;
    let m = p.model.num_phases();
    let mut header = vec!["x".to_string(), "k".to_string()];
    header.extend(phase_headers(m));
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut t = Table::new(&header_refs);
    match process {
        Process::Walk => {
            let w = p.walk()?;
            let grid = p.grid(Functional::Walk, false)?;
            let rows: Result<Vec<_>, _> = grid
                .par_iter()
                .map(|&x| w.cdf(x - a, k).map(|v| (x, v)))
                .collect();
            for (x, v) in rows? {
                let mut row = vec![x, k as f64];
                row.extend(v.iter().copied());
                t.push(row);
            }
            t.write(out, "cdf_walk.csv")?;
            println!("wrote cdf_walk.csv to {}", out.display());
        }
        Process::Queue => {
            let q = p.queue()?;
            let grid = p.grid(Functional::Queue, true)?;
            let rows: Result<Vec<_>, _> = grid
                .par_iter()
                .map(|&x| q.cdf(a, x, k).map(|v| (x, v)))
                .collect();
            for (x, v) in rows? {
                let mut row = vec![x, k as f64];
                row.extend(v.iter().copied());
                t.push(row);
            }
            t.write(out, "cdf_queue.csv")?;
            println!("wrote cdf_queue.csv to {}", out.display());
        }
    }
    Ok(())
}

/// `extrema`: running minimum or maximum CDF curve.
pub fn cmd_extrema(
    p: &Prepared,
    process: Process,
    which: Which,
    k: Option<usize>,
    out: &Path,
) -> anyhow::Result<()> {
    let k = p.stage_or_default(k);
    let a = p.cfg.initial.level;
    let m = p.model.num_phases();
    let mut header = vec!["x".to_string(), "k".to_string()];
    header.extend(phase_headers(m));
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut t = Table::new(&header_refs);
    let (functional, name) = match (process, which) {
        (Process::Walk, Which::Min) => (Functional::MinWalk, "extrema_walk_min.csv"),
        (Process::Walk, Which::Max) => (Functional::MaxWalk, "extrema_walk_max.csv"),
        (Process::Queue, Which::Min) => (Functional::MinQueue, "extrema_queue_min.csv"),
        (Process::Queue, Which::Max) => (Functional::MaxQueue, "extrema_queue_max.csv"),
    };
    let grid = p.grid(functional, matches!(process, Process::Queue))?;
    let rows: Result<Vec<_>, fluidtime_core::Error> = match process {
        Process::Walk => {
            let w = p.walk()?;
            grid.par_iter()
                .map(|&x| {
                    let v = match which {
                        Which::Min => w.min_cdf(x - a, k)?,
                        Which::Max => w.max_cdf(x - a, k)?,
                    };
                    Ok((x, v))
                })
                .collect()
        }
        Process::Queue => {
            let q = p.queue()?;
            grid.par_iter()
                .map(|&x| {
                    let v = match which {
                        Which::Min => q.min_cdf(a, x, k)?,
                        Which::Max => q.max_cdf(a, x, k)?,
                    };
                    Ok((x, v))
                })
                .collect()
        }
    };
    for (x, v) in rows? {
        let mut row = vec![x, k as f64];
        row.extend(v.iter().copied());
        t.push(row);
    }
    t.write(out, name)?;
    println!("wrote {name} to {}", out.display());
    Ok(())
}

/// `joint`: joint law of an extremum and the terminal level, one row per
/// (x, y) pair with x from the grid and y from the supplied list.
pub fn cmd_joint(
    p: &Prepared,
    process: Process,
    which: Which,
    y_values: &[f64],
    k: Option<usize>,
    out: &Path,
) -> anyhow::Result<()> {
    if y_values.is_empty() {
        bail!("joint needs at least one --y-values entry");
    }
    let k = p.stage_or_default(k);
    let a = p.cfg.initial.level;
    let m = p.model.num_phases();
    let mut header = vec!["x".to_string(), "y".to_string(), "k".to_string()];
    header.extend(phase_headers(m));
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut t = Table::new(&header_refs);
    let (functional, name) = match (process, which) {
        (Process::Walk, Which::Min) => (Functional::MinWalk, "joint_walk_min.csv"),
        (Process::Walk, Which::Max) => (Functional::MaxWalk, "joint_walk_max.csv"),
        (Process::Queue, Which::Min) => (Functional::MinQueue, "joint_queue_min.csv"),
        (Process::Queue, Which::Max) => (Functional::MaxQueue, "joint_queue_max.csv"),
    };
    let grid = p.grid(functional, matches!(process, Process::Queue))?;
    match process {
        Process::Walk => {
            let w = p.walk()?;
            for &y in y_values {
                for &x in &grid {
                    let v = match which {
                        Which::Min => w.joint_min_cdf(x - a, y - a, k)?,
                        Which::Max => w.joint_max_cdf(x - a, y - a, k)?,
                    };
                    let mut row = vec![x, y, k as f64];
                    row.extend(v.iter().copied());
                    t.push(row);
                }
            }
        }
        Process::Queue => {
            let q = p.queue()?;
            for &y in y_values {
                if y < 0.0 {
                    bail!("queue joint laws need y >= 0");
                }
                for &x in &grid {
                    let v = match which {
                        Which::Min => q.joint_min_cdf(a, x, y, k)?,
                        Which::Max => q.joint_max_cdf(a, x, y, k)?,
                    };
                    let mut row = vec![x, y, k as f64];
                    row.extend(v.iter().copied());
                    t.push(row);
                }
            }
        }
    }
    t.write(out, name)?;
    println!("wrote {name} to {}", out.display());
    Ok(())
}

/// `bph`: density of the bilateral phase-type law, both algebraic forms.
pub fn cmd_bph(p: &Prepared, out: &Path) -> anyhow::Result<()> {
    let b = match &p.cfg.bph {
        Some(spec) => {
            let n = spec.gamma.len();
            if spec.d.len() != n || spec.d.iter().any(|r| r.len() != n) || spec.e.len() != n {
                bail!("bph spec: gamma, d, e must share one dimension");
            }
            let mut d = DMatrix::zeros(n, n);
            for (i, row) in spec.d.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    d[(i, j)] = v;
                }
            }
            BphDistribution::new(
                &DVector::from_vec(spec.gamma.clone()),
                &d,
                &DVector::from_vec(spec.e.clone()),
            )?
        }
        None => {
            let (gamma, d, e) =
                erlangized_bph_representation(&p.model, &p.clock, p.initial_phase)?;
            BphDistribution::new(&gamma, &d, &e)?
        }
    };
    let grid = p.grid(Functional::Walk, false)?;
    let mut t = Table::new(&["x", "density", "density_alt"]);
    for &x in &grid {
        t.push(vec![x, b.density(x), b.density_alt(x)]);
    }
    t.write(out, "bph_density.csv")?;
    let (below, above) = b.density_at_zero();
    println!(
        "wrote bph_density.csv to {} (limits at zero: {} / {})",
        out.display(),
        fmt(below),
        fmt(above)
    );
    Ok(())
}

/// `simulate`: dump one path summary per row.
pub fn cmd_simulate(p: &Prepared, out: &Path) -> anyhow::Result<()> {
    let plan = SimulationPlan::new(
        p.model.clone(),
        p.clock,
        p.cfg.initial.level,
        p.initial_phase,
        p.cfg.mc.paths,
        p.cfg.mc.seed,
    )?;
    let summaries = simulate(&plan)?;
    let mut t = Table::new(&[
        "path",
        "x_t",
        "min_walk",
        "max_walk",
        "z_t",
        "min_queue",
        "max_queue",
        "terminal_phase",
        "terminal_stage",
        "first_return_stage",
        "first_return_phase",
    ]);
    for (i, s) in summaries.iter().enumerate() {
        t.push_opt(vec![
            Some(i as f64),
            Some(s.x_t),
            Some(s.min_walk),
            Some(s.max_walk),
            Some(s.z_t),
            Some(s.min_queue),
            Some(s.max_queue),
            Some((s.terminal_phase + 1) as f64),
            Some(s.terminal_stage as f64),
            s.first_return.map(|fr| fr.stage as f64),
            s.first_return.map(|fr| (fr.phase + 1) as f64),
        ]);
    }
    t.write(out, "paths.csv")?;
    println!(
        "wrote paths.csv ({} paths) to {}",
        summaries.len(),
        out.display()
    );
    Ok(())
}

struct VerifyItem {
    name: &'static str,
    report: VerificationReport,
}

/// `verify`: simulate and compare every analytic law on five-point grids.
/// Returns whether all checks passed.
pub fn cmd_verify(p: &Prepared, threshold: f64, out: &Path) -> anyhow::Result<bool> {
    let a = p.cfg.initial.level;
    let phase = p.initial_phase;
    let k = p.clock.stages();
    let q = p.queue()?;
    let w = q.walk();

    let plan = SimulationPlan::new(
        p.model.clone(),
        p.clock,
        a,
        phase,
        p.cfg.mc.paths,
        p.cfg.mc.seed,
    )?;
    let summaries = simulate(&plan)?;
    let n = summaries.len();

    // Grid from an independent pre-simulation, quantiles 5..95.
    let pre_plan = SimulationPlan::new(
        p.model.clone(),
        p.clock,
        a,
        phase,
        10_000,
        p.cfg.mc.seed.wrapping_add(0x9E37_79B9_7F4A_7C15),
    )?;
    let pre = simulate(&pre_plan)?;
    let qgrid = |f: Functional| -> Vec<f64> {
        [0.05, 0.25, 0.5, 0.75, 0.95]
            .iter()
            .map(|&p| sample_quantile(&pre, f, p))
            .collect()
    };

    let mut items: Vec<VerifyItem> = Vec::new();
    let mut run_marginal = |name: &'static str,
                            f: Functional,
                            analytic: &dyn Fn(f64) -> anyhow::Result<f64>|
     -> anyhow::Result<()> {
        let grid = qgrid(f);
        let (est, se) = empirical_cdf(&summaries, f, &grid)?;
        let vals: anyhow::Result<Vec<f64>> = grid.iter().map(|&x| analytic(x)).collect();
        let coords: Vec<(f64, Option<f64>)> = grid.iter().map(|&x| (x, None)).collect();
        let report = compare(&coords, &vals?, &est, &se, n, threshold)?;
        items.push(VerifyItem { name, report });
        Ok(())
    };

    run_marginal("walk_cdf", Functional::Walk, &|x| {
        Ok(w.cdf(x - a, k)?[phase])
    })?;
    run_marginal("walk_min", Functional::MinWalk, &|x| {
        Ok(w.min_cdf(x - a, k)?[phase])
    })?;
    run_marginal("walk_max", Functional::MaxWalk, &|x| {
        Ok(w.max_cdf(x - a, k)?[phase])
    })?;
    run_marginal("queue_cdf", Functional::Queue, &|x| {
        Ok(q.cdf(a, x.max(0.0), k)?[phase])
    })?;
    run_marginal("queue_min", Functional::MinQueue, &|x| {
        Ok(q.min_cdf(a, x.max(0.0), k)?[phase])
    })?;
    run_marginal("queue_max", Functional::MaxQueue, &|x| {
        Ok(q.max_cdf(a, x.max(0.0), k)?[phase])
    })?;

    // Joint laws: pair the extremum quantiles with level quantiles.
    let level_grid = qgrid(Functional::Walk);
    let queue_grid = qgrid(Functional::Queue);
    let pair_up = |xs: Vec<f64>, ys: &[f64]| -> Vec<(f64, f64)> {
        xs.iter()
            .zip(ys.iter().rev())
            .map(|(&x, &y)| (x, y))
            .collect()
    };

    let pairs = pair_up(qgrid(Functional::MinWalk), &level_grid);
    let (est, se) = empirical_joint_cdf(&summaries, Functional::MinWalk, Functional::Walk, &pairs)?;
    let vals: anyhow::Result<Vec<f64>> = pairs
        .iter()
        .map(|&(x, y)| Ok(w.joint_min_cdf(x - a, y - a, k)?[phase]))
        .collect();
    let coords: Vec<(f64, Option<f64>)> = pairs.iter().map(|&(x, y)| (x, Some(y))).collect();
    items.push(VerifyItem {
        name: "walk_joint_min",
        report: compare(&coords, &vals?, &est, &se, n, threshold)?,
    });

    let pairs = pair_up(qgrid(Functional::MaxWalk), &level_grid);
    let (est, se) = empirical_joint_cdf(&summaries, Functional::MaxWalk, Functional::Walk, &pairs)?;
    let vals: anyhow::Result<Vec<f64>> = pairs
        .iter()
        .map(|&(x, y)| Ok(w.joint_max_cdf(x - a, y - a, k)?[phase]))
        .collect();
    let coords: Vec<(f64, Option<f64>)> = pairs.iter().map(|&(x, y)| (x, Some(y))).collect();
    items.push(VerifyItem {
        name: "walk_joint_max",
        report: compare(&coords, &vals?, &est, &se, n, threshold)?,
    });

    let pairs = pair_up(qgrid(Functional::MinQueue), &queue_grid);
    let (est, se) =
        empirical_joint_cdf(&summaries, Functional::MinQueue, Functional::Queue, &pairs)?;
    let vals: anyhow::Result<Vec<f64>> = pairs
        .iter()
        .map(|&(x, y)| Ok(q.joint_min_cdf(a, x.max(0.0), y.max(0.0), k)?[phase]))
        .collect();
    let coords: Vec<(f64, Option<f64>)> = pairs.iter().map(|&(x, y)| (x, Some(y))).collect();
    items.push(VerifyItem {
        name: "queue_joint_min",
        report: compare(&coords, &vals?, &est, &se, n, threshold)?,
    });

    let pairs = pair_up(qgrid(Functional::MaxQueue), &queue_grid);
    let (est, se) =
        empirical_joint_cdf(&summaries, Functional::MaxQueue, Functional::Queue, &pairs)?;
    let vals: anyhow::Result<Vec<f64>> = pairs
        .iter()
        .map(|&(x, y)| Ok(q.joint_max_cdf(a, x.max(a), y.max(0.0), k)?[phase]))
        .collect();
    let coords: Vec<(f64, Option<f64>)> = pairs.iter().map(|&(x, y)| (x, Some(y))).collect();
    items.push(VerifyItem {
        name: "queue_joint_max",
        report: compare(&coords, &vals?, &est, &se, n, threshold)?,
    });

    let mut t = Table::new(&[
        "check",
        "x",
        "y",
        "analytic",
        "estimate",
        "std_error",
        "z_score",
    ]);
    let mut pass = true;
    let mut max_z = 0.0_f64;
    for (idx, item) in items.iter().enumerate() {
        pass &= item.report.pass;
        max_z = max_z.max(item.report.max_z);
        for pt in &item.report.points {
            t.push_opt(vec![
                Some(idx as f64),
                Some(pt.x),
                pt.y,
                Some(pt.analytic),
                Some(pt.estimate),
                Some(pt.std_error),
                Some(pt.z_score),
            ]);
        }
        println!(
            "{:16} max z = {:6.3}  ks = {:.5}  [{}]",
            item.name,
            item.report.max_z,
            item.report.ks_stat,
            if item.report.pass { "ok" } else { "FAIL" }
        );
    }
    t.write(out, "verify.csv")?;
    println!(
        "verification {} (max z = {max_z:.3}, {} paths, seed {}); wrote verify.csv to {}",
        if pass { "PASSED" } else { "FAILED" },
        p.cfg.mc.paths,
        p.cfg.mc.seed,
        out.display()
    );
    Ok(pass)
}

/// `paper-example`: emit the data behind the bundled example study: level
/// CDFs across maturities, across stage counts, and the density-jump table.
pub fn cmd_paper_example(p_excited: f64, out: &Path) -> anyhow::Result<()> {
    let model = fluidtime_core::two_regime_model(p_excited)?;
    let m = model.num_phases();

    // Level CDF at different maturities, stage count fixed at 30.
    let mut header = vec!["theta".to_string(), "x".to_string()];
    header.extend(phase_headers(m));
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut maturities = Table::new(&header_refs);
    for theta in [5.0, 10.0, 15.0, 50.0] {
        let clock = ErlangClock::new(theta, 30).context("clock")?;
        let w = WalkDistributions::new(model.clone(), clock, ExpmMethod::Auto)?;
        let mut x = -40.0;
        while x <= 100.0 + 1e-9 {
            let v = w.cdf(x, 30)?;
            let mut row = vec![theta, x];
            row.extend(v.iter().copied());
            maturities.push(row);
            x += 0.5;
        }
    }
    maturities.write(out, "maturity_cdf.csv")?;

    // Level CDF at mean maturity 10 for increasingly fine Erlang clocks.
    let mut header = vec!["stages".to_string(), "x".to_string()];
    header.extend(phase_headers(m));
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut stages_t = Table::new(&header_refs);
    for l in [1usize, 2, 5, 10, 30] {
        let clock = ErlangClock::new(10.0, l).context("clock")?;
        let w = WalkDistributions::new(model.clone(), clock, ExpmMethod::Auto)?;
        let mut x = -30.0;
        while x <= 50.0 + 1e-9 {
            let v = w.cdf(x, l)?;
            let mut row = vec![l as f64, x];
            row.extend(v.iter().copied());
            stages_t.push(row);
            x += 0.5;
        }
    }
    stages_t.write(out, "erlang_cdf.csv")?;

    // Density jump of the single-stage law at zero, per down-phase.
    let clock = ErlangClock::new(10.0, 1).context("clock")?;
    let nu = clock.rate();
    let w = WalkDistributions::new(model.clone(), clock, ExpmMethod::Auto)?;
    let (left, right) = w.density_one_sided_at_zero(1)?;
    let mut jump_t = Table::new(&[
        "phase",
        "rate",
        "expected_jump",
        "left_derivative",
        "right_derivative",
        "fd_jump",
    ]);
    let h = 1e-6;
    for (i, &user) in model.minus_phases().iter().enumerate() {
        let at = |x: f64| -> anyhow::Result<f64> { Ok(w.cdf(x, 1)?[user]) };
        let fd = (at(0.0)? - at(-h)?) / h - (at(h)? - at(0.0)?) / h;
        let rate = model.rates_user()[user];
        jump_t.push(vec![
            (user + 1) as f64,
            rate,
            nu / rate.abs(),
            left[i],
            right[i],
            fd,
        ]);
    }
    jump_t.write(out, "density_jump.csv")?;

    println!(
        "wrote maturity_cdf.csv, erlang_cdf.csv, density_jump.csv to {}",
        out.display()
    );
    Ok(())
}
