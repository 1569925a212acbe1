use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use dlsurface::derivatives::{block_relative_error, fd_gradient};
use dlsurface::landscape::{optimal_loss, Diagnostic, GdConfig};
use dlsurface::model::{data_spectrum, DataSpectrum};
use dlsurface::nonlinear::{expected_loss, PathModel};
use dlsurface::text::{read_matrix, write_matrix};
use dlsurface::{
    classify_point, construct_bad_saddle, construct_indefinite_point, construct_index_set_critical_point,
    forward, full_hessian, global_minimum, gradient, loss, loss_preserving_rank_perturbation, rank_tol, train_gd,
    DatasetPair, NetworkShape, ToleranceConfig, WeightStack,
};

use crate::args::{Cli, Command, ConstructKind};
use crate::report::{matrix, stack, value};
use crate::{exit, tolerances, CliError, Outcome, RunConfig};

/// Gradient-check pass threshold on the largest block-relative error.
const GRAD_CHECK_TOL: f64 = 1e-6;
/// Initialization scale when a command draws its own weights.
const RANDOM_INIT_SCALE: f64 = 1.0;

struct Ctx<'a> {
    cli: &'a Cli,
    cfg: ToleranceConfig,
    strict: bool,
    warnings: Vec<String>,
}

impl Ctx<'_> {
    fn data(&self) -> Result<DatasetPair, CliError> {
        let c = &self.cli.common;
        let x = c.x.as_ref().ok_or_else(|| CliError::Input("--x FILE is required".into()))?;
        let y = c.y.as_ref().ok_or_else(|| CliError::Input("--y FILE is required".into()))?;
        let xm = read_matrix(x).map_err(|e| CliError::Input(format!("cannot load X file: {e}")))?;
        let ym = read_matrix(y).map_err(|e| CliError::Input(format!("cannot load Y file: {e}")))?;
        Ok(DatasetPair::new(xm, ym)?)
    }

    fn weights(&self) -> Result<Option<WeightStack>, CliError> {
        match &self.cli.common.weights {
            Some(dir) => Ok(Some(WeightStack::load_dir(dir)?)),
            None => Ok(None),
        }
    }

    /// Shape from `--shape`, else from the weight manifest; both must agree.
    fn shape(&self, weights: Option<&WeightStack>, data: &DatasetPair) -> Result<NetworkShape, CliError> {
        let given = self.cli.common.shape.as_deref().map(NetworkShape::parse).transpose()?;
        let shape = match (given, weights) {
            (Some(s), Some(w)) if &s != w.shape() => {
                return Err(CliError::Input(format!("--shape {s} disagrees with weights of shape {}", w.shape())))
            }
            (Some(s), _) => s,
            (None, Some(w)) => w.shape().clone(),
            (None, None) => return Err(CliError::Input("--shape is required when --weights is not given".into())),
        };
        data.check_shape(&shape)?;
        Ok(shape)
    }

    /// Weights from `--weights`, else a seeded draw.
    fn point(&mut self, data: &DatasetPair, scale: f64) -> Result<WeightStack, CliError> {
        let loaded = self.weights()?;
        let shape = self.shape(loaded.as_ref(), data)?;
        Ok(match loaded {
            Some(w) => w,
            None => {
                self.warnings.push(format!("no --weights given; using a seeded N(0, {scale}^2) draw"));
                WeightStack::seeded(&shape, scale, self.cli.common.seed)
            }
        })
    }

    /// In strict mode returns the refusal report when the hypotheses fail.
    fn gate(&mut self, spectrum: &DataSpectrum) -> Option<Value> {
        let flags = spectrum.flags;
        if flags.all_hold() {
            return None;
        }
        let violations = flags.violations();
        if self.strict {
            return Some(json!({
                "status": "assumption_violation",
                "AssumptionFlags": value(&flags),
                "violations": violations,
            }));
        }
        for v in violations {
            self.warnings.push(format!("unverified: {v}"));
        }
        None
    }
}

fn config(cli: &Cli, cfg: &ToleranceConfig, strict: bool) -> RunConfig {
    let c = &cli.common;
    let parameters = match &cli.command {
        Command::Analyze | Command::GradCheck | Command::Classify => json!({}),
        Command::Hessian { export } => json!({ "export": export }),
        Command::Construct { kind, save } => {
            let mut p = json!({ "kind": kind.name(), "save": save });
            match kind {
                ConstructKind::BadSaddle { top } => p["top"] = json!(top),
                ConstructKind::IndexSet { index_set } => p["index_set"] = json!(index_set),
                _ => {}
            }
            p
        }
        Command::Perturb { layer, epsilon, save } => json!({ "layer": layer, "epsilon": epsilon, "save": save }),
        Command::Train { step, iters, stop_grad, record_every, init_scale, save } => json!({
            "step": step,
            "iters": iters,
            "stop_grad": stop_grad,
            "record_every": record_every,
            "init_scale": init_scale,
            "save": save,
        }),
        Command::ReluMc { rho, q, samples } => json!({
            "rho": rho,
            "q": q.unwrap_or(1.0 / rho),
            "samples": samples,
        }),
    };
    let command = match &cli.command {
        Command::Construct { kind, .. } => format!("construct {}", kind.name()),
        other => other.name().to_string(),
    };
    RunConfig {
        command,
        x_path: c.x.clone(),
        y_path: c.y.clone(),
        shape: c.shape.as_deref().and_then(|s| NetworkShape::parse(s).ok()).map(|s| s.widths().to_vec()),
        weights_dir: c.weights.clone(),
        seed: c.seed,
        strict,
        tolerances: *cfg,
        output_path: c.out.clone(),
        parameters,
    }
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let cfg = tolerances(&cli.common)?;
    let strict = !cli.common.permissive;
    let mut ctx = Ctx { cli, cfg, strict, warnings: Vec::new() };
    let (body, exit_code) = match &cli.command {
        Command::Analyze => analyze(&mut ctx)?,
        Command::GradCheck => grad_check(&mut ctx)?,
        Command::Hessian { export } => hessian(&mut ctx, export.as_deref())?,
        Command::Classify => classify(&mut ctx)?,
        Command::Construct { kind, save } => construct(&mut ctx, kind, save.as_deref())?,
        Command::Perturb { layer, epsilon, save } => perturb(&mut ctx, *layer, *epsilon, save.as_deref())?,
        Command::Train { step, iters, stop_grad, record_every, init_scale, save } => {
            let gd = GdConfig { step: *step, max_iters: *iters, stop_grad_norm: *stop_grad, record_every: *record_every };
            train(&mut ctx, &gd, *init_scale, save.as_deref())?
        }
        Command::ReluMc { rho, q, samples } => relu_mc(&mut ctx, *rho, *q, *samples)?,
    };
    let mut report = Map::new();
    report.insert("config".into(), value(&config(cli, &cfg, strict)));
    report.insert("warnings".into(), json!(ctx.warnings));
    report.insert("status".into(), json!("ok"));
    let Value::Object(body) = body else { unreachable!("command bodies are objects") };
    report.extend(body);
    Ok(Outcome { report: Value::Object(report), exit_code })
}

type Body = (Value, u8);

fn spectrum_json(spectrum: &DataSpectrum) -> Value {
    let mut v = json!({
        "assumption_flags": value(&spectrum.flags),
        "violations": spectrum.flags.violations(),
    });
    if let Some(d) = &spectrum.decomposition {
        v["sigma"] = matrix(&d.sigma);
        v["eigvalues"] = json!(d.eigvalues);
        v["eigvectors"] = matrix(&d.eigvectors);
        v["ls_map"] = matrix(&d.ls_map);
    }
    v
}

fn analyze(ctx: &mut Ctx) -> Result<Body, CliError> {
    let data = ctx.data()?;
    let weights = ctx.weights()?;
    let shape = ctx.shape(weights.as_ref(), &data)?;
    let spectrum = data_spectrum(&data, &ctx.cfg);
    if let Some(refusal) = ctx.gate(&spectrum) {
        return Ok((refusal, exit::ASSUMPTION));
    }
    let mut body = json!({
        "DataSpectrum": spectrum_json(&spectrum),
        "NetworkShape": {
            "widths": shape.widths(),
            "hidden_layers": shape.hidden_layers(),
            "p": shape.p(),
            "p_hat": shape.p_hat(),
            "num_params": shape.num_params(),
        },
        "loss_star": optimal_loss(&shape, &data, &ctx.cfg).ok(),
    });
    if let Some(w) = weights {
        body["loss"] = json!(loss(&w, &data)?);
    }
    Ok((body, exit::OK))
}

fn grad_check(ctx: &mut Ctx) -> Result<Body, CliError> {
    let data = ctx.data()?;
    let w = ctx.point(&data, RANDOM_INIT_SCALE)?;
    let g = gradient(&w, &data)?;
    let fd = fd_gradient(&w, &data, ctx.cfg.fd_step)?;
    let layers: Vec<Value> = (1..=w.shape().num_layers())
        .map(|k| {
            json!({
                "layer": k,
                "analytic": matrix(g.block(k)),
                "finite_difference": matrix(fd.block(k)),
                "relative_error": block_relative_error(g.block(k), fd.block(k)),
            })
        })
        .collect();
    let worst = (1..=w.shape().num_layers())
        .map(|k| block_relative_error(g.block(k), fd.block(k)))
        .fold(0.0, f64::max);
    Ok((
        json!({
            "GradientCheck": {
                "grad_norm": g.stacked_norm,
                "fd_step": ctx.cfg.fd_step,
                "max_relative_error": worst,
                "tolerance": GRAD_CHECK_TOL,
                "passed": worst <= GRAD_CHECK_TOL,
                "layers": layers,
            },
            "loss": loss(&w, &data)?,
        }),
        exit::OK,
    ))
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn hessian(ctx: &mut Ctx, export: Option<&Path>) -> Result<Body, CliError> {
    let data = ctx.data()?;
    let w = ctx.point(&data, RANDOM_INIT_SCALE)?;
    let h = full_hessian(&w, &data, &ctx.cfg)?;
    let eig = h.eigenvalues();
    let sidecar = h.sidecar();
    if let Some(path) = export {
        write_matrix(path, &h.matrix)?;
        let side = sidecar_path(path);
        let text = crate::render(&value(&sidecar));
        std::fs::write(&side, text)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", side.display())))?;
    }
    Ok((
        json!({
            "HessianMatrix": {
                "sidecar": value(&sidecar),
                "eigenvalues": eig,
                "min_eig": eig.last(),
                "max_eig": eig.first(),
                "matrix": export.is_none().then(|| matrix(&h.matrix)),
                "export": export.map(|p| json!({ "matrix": p, "sidecar": sidecar_path(p) })),
            }
        }),
        exit::OK,
    ))
}

fn classification(w: &WeightStack, data: &DatasetPair, cfg: &ToleranceConfig) -> Result<(Value, u8), CliError> {
    let rep = classify_point(w, data, cfg)?;
    let violated = rep.diagnostics.iter().any(|d| matches!(d, Diagnostic::TheoremViolation { .. }));
    let code = if violated { exit::INTERNAL } else { exit::OK };
    Ok((value(&rep), code))
}

fn classify(ctx: &mut Ctx) -> Result<Body, CliError> {
    let data = ctx.data()?;
    let loaded = ctx.weights()?;
    if loaded.is_none() {
        return Err(CliError::Input("classify needs --weights DIR".into()));
    }
    let w = ctx.point(&data, RANDOM_INIT_SCALE)?;
    let spectrum = data_spectrum(&data, &ctx.cfg);
    if let Some(refusal) = ctx.gate(&spectrum) {
        return Ok((refusal, exit::ASSUMPTION));
    }
    let (rep, code) = classification(&w, &data, &ctx.cfg)?;
    Ok((json!({ "CriticalPointReport": rep }), code))
}

fn save_stack(w: &WeightStack, dir: Option<&Path>) -> Result<(), CliError> {
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
        w.save_dir(dir)?;
    }
    Ok(())
}

fn construct(ctx: &mut Ctx, kind: &ConstructKind, save: Option<&Path>) -> Result<Body, CliError> {
    let data = ctx.data()?;
    let shape = ctx.shape(None, &data)?;
    let spectrum = data_spectrum(&data, &ctx.cfg);
    if let Some(refusal) = ctx.gate(&spectrum) {
        return Ok((refusal, exit::ASSUMPTION));
    }
    let cfg = ctx.cfg;
    let mut extra = Map::new();
    let w = match kind {
        ConstructKind::GlobalMin => {
            let g = global_minimum(&shape, &data, &cfg)?;
            extra.insert("product".into(), matrix(&g.product));
            extra.insert("loss_star".into(), json!(g.loss_star));
            extra.insert("loss_evaluated".into(), json!(g.loss_evaluated));
            g.weights
        }
        ConstructKind::BadSaddle { top } => {
            let top = top.as_deref().map(read_matrix).transpose()?;
            construct_bad_saddle(&shape, &data, top, ctx.cli.common.seed, &cfg)?
        }
        ConstructKind::Indefinite => construct_indefinite_point(&shape, &data, &cfg)?,
        ConstructKind::IndexSet { index_set } => construct_index_set_critical_point(&data, &shape, index_set, &cfg)?,
    };
    save_stack(&w, save)?;
    let (rep, code) = classification(&w, &data, &cfg)?;
    extra.insert("WeightStack".into(), stack(&w));
    extra.insert("CriticalPointReport".into(), rep);
    extra.insert("saved_to".into(), json!(save));
    Ok((Value::Object(extra), code))
}

fn perturb(ctx: &mut Ctx, layer: usize, epsilon: f64, save: Option<&Path>) -> Result<Body, CliError> {
    let data = ctx.data()?;
    let Some(w) = ctx.weights()? else {
        return Err(CliError::Input("perturb needs --weights DIR".into()));
    };
    ctx.shape(Some(&w), &data)?;
    let out = loss_preserving_rank_perturbation(&w, &data, layer, epsilon, ctx.cli.common.seed, &ctx.cfg)?;
    save_stack(&out.weights, save)?;
    let ranks: Vec<usize> = (1..=w.shape().num_layers())
        .map(|k| rank_tol(&out.weights.product(k, 1), &ctx.cfg))
        .collect();
    Ok((
        json!({
            "PerturbationOutcome": value(&out),
            "loss_change": out.loss_after - out.loss_before,
            "prefix_ranks_after": ranks,
            "WeightStack": stack(&out.weights),
            "saved_to": save,
        }),
        exit::OK,
    ))
}

fn train(ctx: &mut Ctx, gd: &GdConfig, init_scale: f64, save: Option<&Path>) -> Result<Body, CliError> {
    let data = ctx.data()?;
    let w0 = ctx.point(&data, init_scale)?;
    let out = train_gd(&w0, &data, gd)?;
    save_stack(&out.weights, save)?;
    let last = out.last();
    Ok((
        json!({
            "GdOutcome": {
                "status": value(&out.status),
                "iterations": out.iterations,
                "final_loss": last.loss,
                "final_grad_norm": last.grad_norm,
                "trajectory": value(&out.trajectory),
            },
            "loss_star": optimal_loss(w0.shape(), &data, &ctx.cfg).ok(),
            "WeightStack": stack(&out.weights),
            "saved_to": save,
        }),
        exit::OK,
    ))
}

fn relu_mc(ctx: &mut Ctx, rho: f64, q: Option<f64>, samples: usize) -> Result<Body, CliError> {
    let data = ctx.data()?;
    let w = ctx.point(&data, RANDOM_INIT_SCALE)?;
    let model = PathModel::new(w.shape().clone(), rho, q, ctx.cli.common.seed)?;
    let el = expected_loss(&model, &w, &data, samples)?;
    let est = &el.estimate;
    let linear = forward(&w, data.x())?;
    let mut z = 0.0_f64;
    let mut deviation = 0.0_f64;
    for ((m, s), l) in est.mean.iter().zip(est.stderr.iter()).zip(linear.iter()) {
        deviation = deviation.max((m - l).abs());
        if *s > 0.0 {
            z = z.max((m - l).abs() / s);
        }
    }
    let mut body = json!({
        "PathModel": value(&model),
        "McEstimate": {
            "n_samples": est.n_samples,
            "shards": est.shards,
            "mean": matrix(&est.mean),
            "stderr": matrix(&est.stderr),
            "linear_reference": matrix(&linear),
            "max_abs_z": z,
            "max_abs_deviation": deviation,
        },
        "expected_loss": {
            "value": el.value,
            "stderr": el.stderr,
            "bias": el.bias,
            "linear_loss": loss(&w, &data)?,
        },
    });
    if let Some(out) = &ctx.cli.common.out {
        let mut files = Map::new();
        for (name, m) in [("mean", &est.mean), ("stderr", &est.stderr), ("linear", &linear)] {
            let mut p = out.as_os_str().to_owned();
            p.push(format!(".{name}.txt"));
            let p = PathBuf::from(p);
            write_matrix(&p, m)?;
            files.insert(name.into(), json!(p));
        }
        body["McEstimate"]["files"] = Value::Object(files);
    }
    Ok((body, exit::OK))
}
