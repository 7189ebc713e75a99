//! The co-training loop: sample a batch, run both heads, form the
//! composite loss with the curriculum-modulated distillation weight,
//! backpropagate, and step every parameter tensor exactly once (shared
//! tensors see the sum of both paths' gradients through their single
//! graph node).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use crate::diffcore::{Graph, Rng, Tensor};
use crate::error::{Error, Result};
use crate::losses::{composite_loss, curriculum_weight, distill_loss, soft_cross_entropy};
use crate::matlayers::{assemble_joint, split_joint, MatTAModel};
use crate::optim::{FirstOrderState, ShampooState};
use crate::teacher_data::{evaluate, streams, EvalMetrics, SyntheticTask};

use super::checkpoint::{Checkpoint, MetricsSummary};
use super::config::{PrecondMode, RunConfig, SeedSpec};

pub const METRICS_HEADER: &str = "step,wall_ms,w_d_effective,loss_s,loss_ta,loss_d,loss_total,\
     eval_ce_s,eval_ce_ta,eval_auroc_s,eval_auroc_ta,eval_aucloss_s,eval_aucloss_ta";

/// How one parameter group maps onto model tensors.
#[derive(Clone, Debug)]
enum GroupSpec {
    Single {
        name: String,
    },
    /// A nested layer's weight triple preconditioned as the combined TA
    /// matrix; `slot` is the tensor the TA path reads in the student-shaped
    /// corner (w_s when shared, the TA copy otherwise).
    Joint {
        name: String,
        slot: String,
        ta1: String,
        ta2: String,
    },
}

impl GroupSpec {
    fn name(&self) -> &str {
        match self {
            GroupSpec::Single { name } | GroupSpec::Joint { name, .. } => name,
        }
    }

    fn members(&self) -> Vec<&str> {
        match self {
            GroupSpec::Single { name } => vec![name],
            GroupSpec::Joint { slot, ta1, ta2, .. } => vec![slot, ta1, ta2],
        }
    }
}

fn build_group_specs(model: &MatTAModel, mode: PrecondMode) -> Vec<GroupSpec> {
    let all_names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
    if mode == PrecondMode::PerTensor {
        return all_names
            .into_iter()
            .map(|name| GroupSpec::Single { name })
            .collect();
    }
    let mut grouped: std::collections::HashSet<String> = std::collections::HashSet::new();
    let mut specs = Vec::new();
    for (i, block) in model.blocks.iter().enumerate() {
        for (part, dense) in [("up", &block.up), ("down", &block.down)] {
            let prefix = format!("blocks.{i}.{part}");
            let slot = if dense.shared {
                format!("{prefix}.w_s")
            } else {
                format!("{prefix}.w_s_ta_copy")
            };
            grouped.insert(slot.clone());
            grouped.insert(format!("{prefix}.w_ta1"));
            grouped.insert(format!("{prefix}.w_ta2"));
            specs.push(GroupSpec::Joint {
                name: format!("{prefix}.joint"),
                slot,
                ta1: format!("{prefix}.w_ta1"),
                ta2: format!("{prefix}.w_ta2"),
            });
        }
    }
    // everything not swallowed by a joint group steps on its own
    for name in all_names {
        if !grouped.contains(&name) {
            specs.push(GroupSpec::Single { name });
        }
    }
    specs
}

enum Driver {
    FirstOrder(Vec<(String, FirstOrderState)>),
    Shampoo {
        lr: f64,
        lr_ta: Option<f64>,
        groups: Vec<(GroupSpec, ShampooState, bool)>, // bool: group is TA-only
    },
}

impl Driver {
    fn new(cfg: &RunConfig, model: &MatTAModel) -> Result<Driver> {
        let o = &cfg.optimizer;
        match o.method.as_first_order() {
            Some(method) => {
                let ta_only: std::collections::HashSet<String> =
                    model.ta_only_tensor_names().into_iter().collect();
                let states = model
                    .named_tensors()
                    .into_iter()
                    .map(|(name, _)| {
                        let lr = match o.lr_ta {
                            Some(lr_ta) if ta_only.contains(&name) => lr_ta,
                            _ => o.lr,
                        };
                        (
                            name,
                            FirstOrderState::new(method, lr, o.beta1, o.beta2, o.epsilon),
                        )
                    })
                    .collect();
                Ok(Driver::FirstOrder(states))
            }
            None => {
                let ta_only: std::collections::HashSet<String> =
                    model.ta_only_tensor_names().into_iter().collect();
                let shapes: BTreeMap<String, (usize, usize)> = model
                    .named_tensors()
                    .into_iter()
                    .map(|(n, t)| (n, t.shape()))
                    .collect();
                let mut groups = Vec::new();
                for spec in build_group_specs(model, o.precond_mode) {
                    let (rows, cols) = match &spec {
                        GroupSpec::Single { name } => shapes[name],
                        GroupSpec::Joint { slot, ta1, ta2, .. } => {
                            let (m_s, n_s) = shapes[slot];
                            (m_s + shapes[ta1].0, n_s + shapes[ta2].1)
                        }
                    };
                    let is_ta_only = spec.members().iter().all(|m| ta_only.contains(*m));
                    groups.push((
                        spec,
                        ShampooState::new(rows, cols, o.update_interval, o.epsilon)?,
                        is_ta_only,
                    ));
                }
                Ok(Driver::Shampoo {
                    lr: o.lr,
                    lr_ta: o.lr_ta,
                    groups,
                })
            }
        }
    }

    /// One optimizer step for every parameter tensor.
    fn step(&mut self, model: &mut MatTAModel, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        let mut params: BTreeMap<String, &mut Tensor> =
            model.named_tensors_mut().into_iter().collect();
        match self {
            Driver::FirstOrder(states) => {
                for (name, state) in states {
                    let param = params
                        .get_mut(name.as_str())
                        .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))?;
                    **param = state.step(param, &grads[name.as_str()])?;
                }
            }
            Driver::Shampoo { lr, lr_ta, groups } => {
                for (spec, state, is_ta_only) in groups {
                    let rate = match lr_ta {
                        Some(lr_ta) if *is_ta_only => *lr_ta,
                        _ => *lr,
                    };
                    match spec {
                        GroupSpec::Single { name } => {
                            let grad = &grads[name.as_str()];
                            if grad.is_empty() {
                                continue;
                            }
                            let param = params.get_mut(name.as_str()).unwrap();
                            state.accumulate(grad)?;
                            **param = state.step_param(param, grad, rate)?;
                        }
                        GroupSpec::Joint { slot, ta1, ta2, .. } => {
                            let grad = assemble_joint(
                                &grads[slot.as_str()],
                                &grads[ta1.as_str()],
                                &grads[ta2.as_str()],
                            )?;
                            let (m_s, n_s) = grads[slot.as_str()].shape();
                            let joint_param = {
                                let w_slot = &params[slot.as_str()];
                                assemble_joint(w_slot, &params[ta1.as_str()], &params[ta2.as_str()])?
                            };
                            state.accumulate(&grad)?;
                            let updated = state.step_param(&joint_param, &grad, rate)?;
                            let (ws, wta1, wta2) = split_joint(&updated, m_s, n_s)?;
                            **params.get_mut(slot.as_str()).unwrap() = ws;
                            **params.get_mut(ta1.as_str()).unwrap() = wta1;
                            **params.get_mut(ta2.as_str()).unwrap() = wta2;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Accumulator tensors to persist alongside the model (Shampoo only).
    fn state_tensors(&self) -> Vec<(String, Tensor)> {
        match self {
            Driver::FirstOrder(_) => Vec::new(),
            Driver::Shampoo { groups, .. } => groups
                .iter()
                .flat_map(|(spec, state, _)| {
                    [
                        (format!("optim.{}.left", spec.name()), state.left_acc().detached()),
                        (format!("optim.{}.right", spec.name()), state.right_acc().detached()),
                    ]
                })
                .collect(),
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub struct TrainResult {
    pub checkpoint: Checkpoint,
    pub checkpoint_path: PathBuf,
    pub metrics_path: PathBuf,
    pub final_student: EvalMetrics,
    pub final_ta: EvalMetrics,
}

fn task_from_config(cfg: &RunConfig, seed: u64) -> Result<SyntheticTask> {
    SyntheticTask::new(
        seed,
        cfg.task.d_in,
        cfg.task.classes,
        cfg.task.teacher_hidden,
        cfg.task.mixture_components,
        cfg.task.temperature,
        cfg.task.label_mode,
    )
}

pub(crate) fn eval_both_paths(
    model: &MatTAModel,
    task: &SyntheticTask,
    n_eval: usize,
    seed: u64,
) -> Result<(EvalMetrics, EvalMetrics)> {
    let student = evaluate(|x| Ok(model.forward_values(x)?.0), task, n_eval, seed)?;
    let ta = evaluate(|x| Ok(model.forward_values(x)?.1), task, n_eval, seed)?;
    Ok((student, ta))
}

/// Trains one seed of a config; writes the per-step metrics CSV and the
/// final checkpoint under `output_dir` (seed-suffixed when the config
/// lists several seeds), and returns the checkpoint with the final
/// evaluation of both paths.
pub fn run_train(cfg: &RunConfig, seed: u64) -> Result<TrainResult> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)?;
    let multi = cfg.seed.all().len() > 1;
    let suffix = if multi { format!("_seed{seed}") } else { String::new() };
    let metrics_path = cfg.output_dir.join(format!("metrics{suffix}.csv"));
    let checkpoint_path = cfg.output_dir.join(format!("checkpoint{suffix}.matta"));

    let task = task_from_config(cfg, seed)?;
    let mut model = MatTAModel::new(
        cfg.model_dims(),
        cfg.sharing,
        cfg.model.activation,
        &mut Rng::stream(seed, streams::INIT),
    )?;
    let mut driver = Driver::new(cfg, &model)?;
    let mut rng_train = Rng::stream(seed, streams::TRAIN);
    let curriculum = cfg.loss.curriculum();

    let mut csv = std::io::BufWriter::new(fs::File::create(&metrics_path)?);
    writeln!(csv, "{METRICS_HEADER}")?;

    let mut last_eval: Option<(u64, EvalMetrics, EvalMetrics)> = None;
    for step in 0..cfg.steps {
        let t0 = Instant::now();
        let w_d_eff = curriculum_weight(step, &curriculum, cfg.loss.w_d_target);
        let (x, y) = task.sample_batch(&mut rng_train, cfg.batch_size)?;

        let step_body = |model: &mut MatTAModel, driver: &mut Driver| -> Result<(f64, f64, f64, f64)> {
            let mut g = Graph::new();
            let bound = model.bind(&mut g);
            let xt = g.leaf(&x);
            let yt = g.leaf(&y);
            let (logits_s, logits_ta) = bound.forward(&mut g, &xt)?;
            let l_s = soft_cross_entropy(&mut g, &logits_s, &yt)?;
            let l_ta = soft_cross_entropy(&mut g, &logits_ta, &yt)?;
            let l_d = distill_loss(&mut g, &logits_s, &logits_ta)?;
            let weights = cfg.loss_weights_at(w_d_eff);
            let total = composite_loss(&mut g, &weights, &l_s, &l_ta, &l_d)?;
            let total_value = total.item()?;
            if !total_value.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss {total_value}")));
            }
            let grads = g.backward(&total)?;
            let grad_map: BTreeMap<String, Tensor> = bound
                .named_tensors()
                .into_iter()
                .map(|(name, t)| (name, grads.get_or_zeros(t)))
                .collect();
            driver.step(model, &grad_map)?;
            Ok((l_s.item()?, l_ta.item()?, l_d.item()?, total_value))
        };
        let (loss_s, loss_ta, loss_d, total_value) = step_body(&mut model, &mut driver)
            .map_err(|e| match e {
                Error::Numerical(msg) => {
                    let last = match &last_eval {
                        Some((s, st, _)) => format!(
                            "last finite eval at step {s}: student ce {}",
                            st.cross_entropy
                        ),
                        None => "no finite eval yet".to_string(),
                    };
                    Error::Numerical(format!("{msg} at step {step}; {last}"))
                }
                other => other,
            })?;

        let is_eval_step = (step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps;
        let eval_cells = if is_eval_step {
            let (student, ta) = eval_both_paths(&model, &task, cfg.eval_n, seed)?;
            last_eval = Some((step, student, ta));
            format!(
                "{},{},{},{},{},{}",
                student.cross_entropy,
                ta.cross_entropy,
                fmt_opt(student.auroc),
                fmt_opt(ta.auroc),
                fmt_opt(student.aucloss),
                fmt_opt(ta.aucloss)
            )
        } else {
            ",,,,,".to_string()
        };
        let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
        writeln!(
            csv,
            "{step},{wall_ms:.3},{w_d_eff},{loss_s},{loss_ta},{loss_d},{total_value},{eval_cells}"
        )?;
    }
    csv.flush()?;

    let (final_student, final_ta) = match &last_eval {
        Some((_, s, t)) => (*s, *t),
        None => eval_both_paths(&model, &task, cfg.eval_n, seed)?,
    };

    let mut config_echo = cfg.clone();
    config_echo.seed = SeedSpec::One(seed);
    let mut tensors: Vec<(String, Tensor)> = model
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.detached()))
        .collect();
    tensors.extend(driver.state_tensors());
    let ckpt = Checkpoint {
        config: config_echo,
        final_step: cfg.steps,
        metrics_summary: Some(MetricsSummary {
            step: cfg.steps,
            student: final_student,
            ta: final_ta,
        }),
        extracted: None,
        tensors,
    };
    super::checkpoint::save(&checkpoint_path, &ckpt)?;
    Ok(TrainResult {
        checkpoint: ckpt,
        checkpoint_path,
        metrics_path,
        final_student,
        final_ta,
    })
}

/// Builds the task a checkpoint was trained on.
pub fn task_from_checkpoint(ckpt: &Checkpoint) -> Result<SyntheticTask> {
    task_from_config(&ckpt.config, ckpt.config.seed.first())
}
