//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use cg_invert_core::data::to_image;
use cg_invert_core::gcgls::{diagnostics, solve_with_interrupt, SolveReport};
use cg_invert_core::metrics::{psnr, ssim};
use cg_invert_core::net::{mae, param_count as count_params, predict, train as train_net};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{net_signature, RunConfig};
use crate::dataset::{self, sensing_fingerprint};
use crate::error::{CliError, Result};
use crate::{io, RunOptions};

/// Applies `f` to `0..count` on up to `jobs` threads; results come back in
/// index order and the first failing index wins.
fn par_map<T, F>(count: usize, jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<T>>>> = (0..count).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, count.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let r = f(i);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every index is visited"))
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    io::write_atomic(path, text.as_bytes())
}

fn seconds_since(start: Instant, opts: RunOptions) -> f64 {
    if opts.timing {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    }
}

pub fn gen_data(rc: &RunConfig, out: &Path, export_matrix: bool) -> Result<()> {
    let spec = rc.sensing()?;
    let data = rc.data()?;
    let model = spec.build()?;
    let manifest = dataset::generate(&spec, &data, &model, out)?;
    if export_matrix {
        write_text(&out.join("sensing_matrix.csv"), &io::triplets_csv(&model.triplets()))?;
    }
    println!("{} samples, fingerprint {}", manifest.n_samples, manifest.fingerprint);
    Ok(())
}

pub fn trace_csv(report: &SolveReport) -> String {
    let mut s = String::from("iter,block,F,step_norm,eta\n");
    for r in &report.state.trace {
        let _ = writeln!(s, "{},{},{:?},{:?},{:?}", r.iter, r.block.name(), r.cost, r.step_norm, r.eta);
    }
    s
}

pub fn solve(rc: &RunConfig, data: &Path, out: &Path, opts: RunOptions) -> Result<()> {
    let spec = rc.sensing()?;
    let reg = rc.regularizer()?;
    let cfg = rc.solver()?;
    let max_wall = rc.max_wall()?;
    let model = spec.build()?;
    let cov = rc.covariance(model.n())?;
    let (_, samples) = dataset::load(data, &spec)?;
    io::create_dir(out)?;

    let rows = par_map(samples.len(), opts.jobs, |id| {
        let s = &samples[id];
        let start = Instant::now();
        let mut interrupt = |_: usize| max_wall.is_some_and(|w| start.elapsed().as_secs_f64() > w);
        let rep = solve_with_interrupt(&model, &s.y, &cov, &reg, &cfg, &mut interrupt)?;
        let seconds = seconds_since(start, opts);
        let truth = to_image(&model, &s.c);
        let img = to_image(&model, &rep.c_star);
        let p = psnr(&img, &truth, 1.0)?;
        let q = ssim(&img, &truth, spec.side, 1.0)?;
        io::write_f64s(&out.join(format!("c_star_{id}.f64")), rep.c_star.as_slice())?;
        io::write_pgm(&out.join(format!("c_star_{id}.pgm")), spec.side, img.as_slice())?;
        write_text(&out.join(format!("trace_{id}.csv")), &trace_csv(&rep))?;
        let st = rep.stationarity;
        Ok(format!(
            "{id},{p:?},{q:?},{:?},{:?},{:?},{},{seconds:?}\n",
            rep.final_cost(),
            st.u_grad_norm,
            st.z_residual.abs,
            rep.outer_iterations
        ))
    })?;

    let mut csv = String::from("id,psnr,ssim,F_final,stationarity_u,stationarity_z,iters,seconds\n");
    rows.iter().for_each(|r| csv.push_str(r));
    write_text(&out.join("metrics.csv"), &csv)?;
    println!("solved {} samples into {}", rows.len(), out.display());
    Ok(())
}

pub fn param_count(rc: &RunConfig) -> Result<()> {
    let cfg = rc.net()?;
    println!("{}", count_params(&cfg, rc.signal_len()?));
    Ok(())
}

pub fn train(rc: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let spec = rc.sensing()?;
    let cfg = rc.net()?;
    let tcfg = rc.train()?;
    let frac = rc.val_fraction()?;
    let model = spec.build()?;
    let (_, samples) = dataset::load(data, &spec)?;
    let n_val = (frac * samples.len() as f64).round() as usize;
    if n_val >= samples.len() {
        return Err(CliError::Data(format!(
            "{} samples leave nothing to train on with val_fraction {frac}",
            samples.len()
        )));
    }
    let (train_set, val_set) = samples.split_at(samples.len() - n_val);
    let res = train_net(train_set, val_set, &model, &cfg, &tcfg, None)?;

    let meta = Checkpoint {
        format: checkpoint::FORMAT.into(),
        n: model.n(),
        param_count: res.params.len(),
        sensing_fingerprint: sensing_fingerprint(&spec),
        net: net_signature(&cfg),
        train_seed: tcfg.seed,
        epochs_run: res.history.len(),
        best_epoch: res.best_epoch,
        final_train_mae: res.final_train_mae,
        layout: checkpoint::layout(&res.params),
    };
    checkpoint::save(out, &meta, &res.params)?;
    let mut csv = String::from("epoch,train_mae,val_mae\n");
    for h in &res.history {
        let val = h.val_mae.map_or(String::new(), |v| format!("{v:?}"));
        let _ = writeln!(csv, "{},{:?},{val}", h.epoch, h.train_mae);
    }
    write_text(&out.join("history.csv"), &csv)?;
    println!("final_train_mae {:?}", res.final_train_mae);
    Ok(())
}

pub fn eval(rc: &RunConfig, data: &Path, ckpt: &Path, out: &Path, opts: RunOptions) -> Result<()> {
    let spec = rc.sensing()?;
    let cfg = rc.net()?;
    let model = spec.build()?;
    let (_, params) = checkpoint::load(ckpt, &cfg, model.n(), &sensing_fingerprint(&spec))?;
    let (_, samples) = dataset::load(data, &spec)?;
    io::create_dir(out)?;

    let rows = par_map(samples.len(), opts.jobs, |id| {
        let s = &samples[id];
        let start = Instant::now();
        let x = predict(&s.y, &model, &params, &cfg)?;
        let seconds = seconds_since(start, opts);
        let err = mae(&x, &s.c);
        let truth = to_image(&model, &s.c);
        let img = to_image(&model, &x);
        let p = psnr(&img, &truth, 1.0)?;
        let q = ssim(&img, &truth, spec.side, 1.0)?;
        io::write_pgm(&out.join(format!("recon_{id}.pgm")), spec.side, img.as_slice())?;
        Ok((err, format!("{id},{p:?},{q:?},{err:?},{seconds:?}\n")))
    })?;

    let mut csv = String::from("id,psnr,ssim,mae,seconds\n");
    let mut total = 0.0;
    for (err, row) in &rows {
        total += err;
        csv.push_str(row);
    }
    let mean = if rows.is_empty() { 0.0 } else { total / rows.len() as f64 };
    write_text(&out.join("metrics.csv"), &csv)?;
    let summary = serde_json::json!({ "n_samples": rows.len(), "mae": mean });
    write_text(&out.join("summary.json"), &format!("{summary}\n"))?;
    println!("mae {mean:?}");
    Ok(())
}

pub fn diagnose(rc: &RunConfig, data: &Path, out: &Path, only: Option<usize>, opts: RunOptions) -> Result<()> {
    let spec = rc.sensing()?;
    let reg = rc.regularizer()?;
    let cfg = rc.solver()?;
    let model = spec.build()?;
    let cov = rc.covariance(model.n())?;
    let (_, samples) = dataset::load(data, &spec)?;
    let ids: Vec<usize> = match only {
        Some(i) if i >= samples.len() => {
            return Err(CliError::Data(format!("sample {i} not in a dataset of {}", samples.len())))
        }
        Some(i) => vec![i],
        None => (0..samples.len()).collect(),
    };
    io::create_dir(out)?;

    let rows = par_map(ids.len(), opts.jobs, |k| {
        let id = ids[k];
        let s = &samples[id];
        let rep = solve_with_interrupt(&model, &s.y, &cov, &reg, &cfg, &mut |_| false)?;
        let d = diagnostics(&rep);
        let mut margins = String::from("step,margin\n");
        for (i, m) in d.margins.iter().enumerate() {
            let _ = writeln!(margins, "{i},{m:?}");
        }
        write_text(&out.join(format!("margins_{id}.csv")), &margins)?;
        Ok((
            d.telescoping_holds,
            format!(
                "{id},{},{:?},{:?},{:?},{},{:?},{:?},{:?}\n",
                d.z_step_count,
                d.min_margin,
                d.telescoping_lhs,
                d.telescoping_rhs,
                d.telescoping_holds,
                d.u_grad_norm,
                d.z_residual,
                d.z_residual_rel
            ),
        ))
    })?;

    let mut csv = String::from(
        "id,z_steps,min_margin,telescoping_lhs,telescoping_rhs,telescoping_holds,stationarity_u,stationarity_z,stationarity_z_rel\n",
    );
    rows.iter().for_each(|(_, r)| csv.push_str(r));
    write_text(&out.join("diagnose.csv"), &csv)?;
    let failed: Vec<usize> = ids.iter().zip(&rows).filter(|(_, (ok, _))| !ok).map(|(i, _)| *i).collect();
    if !failed.is_empty() {
        return Err(CliError::Numerical(format!("descent bound violated for samples {failed:?}")));
    }
    println!("descent bounds hold for {} samples", ids.len());
    Ok(())
}
