#![allow(clippy::needless_range_loop)]

use super::*;
use crate::data::sample_triples;
use crate::model::{read_checkpoint, write_checkpoint, Backbone, MaskGenerator};
use crate::objective::Ablation;
use crate::preference::PreferenceKnowledge;
use crate::relation::RelationKnowledge;
use crate::synthetic::{planted_noise, PlantedConfig, PlantedNoise};
use approx::assert_abs_diff_eq;
use std::sync::OnceLock;

fn fixture() -> &'static (PlantedNoise, PreferenceKnowledge, RelationKnowledge) {
    static CELL: OnceLock<(PlantedNoise, PreferenceKnowledge, RelationKnowledge)> = OnceLock::new();
    CELL.get_or_init(|| {
        let p = planted_noise(&PlantedConfig {
            users: 40,
            items: 40,
            clusters: 4,
            per_user: 10,
            noise_ratio: 0.2,
            locality: Some(0.1),
            seed: 5,
        })
        .unwrap();
        let (kp, kr) = p.knowledge(8, 5).unwrap();
        (p, kp, kr)
    })
}

fn knowledge() -> Knowledge<'static> {
    let (_, kp, kr) = fixture();
    Knowledge {
        preference: Some(kp),
        relations: Some(kr),
    }
}

fn small_config() -> TrainConfig {
    TrainConfig {
        dim: 8,
        layers: 2,
        mask_hidden: 8,
        batch_size: 64,
        max_epochs: 3,
        patience: 2,
        lr: 0.01,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn plain_mf(seed: u64) -> TrainConfig {
    TrainConfig {
        backbone: Backbone::Gmf,
        layers: 0,
        alpha: 0.0,
        beta: 0.0,
        ablation: Ablation::all(),
        freeze_mask: true,
        seed,
        ..small_config()
    }
}

#[test]
fn defaults_match_documented_values() {
    let c = TrainConfig::default();
    assert_eq!((c.dim, c.layers, c.batch_size, c.patience, c.max_epochs), (64, 3, 1024, 10, 200));
    assert_eq!((c.lr, c.contrast_tau, c.alpha, c.beta), (1e-3, 0.2, 0.1, 0.01));
    c.validate().unwrap();
}

#[test]
fn config_text_round_trips_and_hashes() {
    let mut c = small_config();
    c.gumbel_tau_end = Some(0.01);
    c.head_hidden = Some(16);
    c.kernel = KernelConfig::Fixed { sigma_k: 1.5, sigma_m: 0.5 };
    c.ablation.no_rk = true;
    let back = TrainConfig::from_text(&c.to_text()).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.hash(), c.hash());
    let mut d = c.clone();
    d.alpha = 0.2;
    assert_ne!(d.hash(), c.hash());
}

#[test]
fn file_values_then_overrides_take_precedence() {
    let mut c = TrainConfig::default();
    c.apply_text("# comment\nalpha = 0.5\n\nbeta=0.2  # trailing\nbackbone = gmf\n").unwrap();
    c.set("alpha", "0.7").unwrap();
    assert_eq!((c.alpha, c.beta, c.backbone), (0.7, 0.2, Backbone::Gmf));
    assert_eq!(c.lr, 1e-3);
}

#[test]
fn config_errors_name_the_problem() {
    let mut c = TrainConfig::default();
    assert!(matches!(c.apply_text("alpha = 1\nnonsense\n"), Err(Error::Malformed { line: 2, .. })));
    let e = c.apply_text("colour = blue").unwrap_err().to_string();
    assert!(e.contains("colour"), "{e}");
    let e = c.apply_text("lr = fast").unwrap_err().to_string();
    assert!(e.contains("line 1"), "{e}");
    for (k, v) in [("lr", "0"), ("batch_size", "0"), ("patience", "0"), ("contrast_tau", "1.5"), ("contrast_tau", "0")] {
        let mut c = TrainConfig::default();
        c.set(k, v).unwrap();
        assert!(c.validate().is_err(), "{k} = {v}");
    }
}

#[test]
fn gumbel_anneal_is_linear_over_epochs() {
    let c = TrainConfig {
        gumbel_tau: 0.2,
        gumbel_tau_end: Some(0.0001),
        max_epochs: 11,
        ..TrainConfig::default()
    };
    assert_eq!(c.gumbel_tau_at(1), 0.2);
    assert_abs_diff_eq!(c.gumbel_tau_at(6), 0.10005, epsilon = 1e-12);
    assert_abs_diff_eq!(c.gumbel_tau_at(11), 0.0001, epsilon = 1e-15);
    assert_abs_diff_eq!(c.gumbel_tau_at(50), 0.0001, epsilon = 1e-15);
    assert_eq!(TrainConfig::default().gumbel_tau_at(7), 0.2);
}

#[test]
fn adam_matches_scalar_recurrence() {
    let (p, _, _) = fixture();
    let t = Trainer::new(&p.dataset, Knowledge::default(), plain_mf(1)).unwrap();
    let mut model = t.model.clone();
    let mut state = OptimizerState::new(&model);
    let start = model.table.weights[[0, 0]];
    let grads = [0.5, -1.0, 0.25];
    let (mut m, mut v, mut x) = (0.0, 0.0, start);
    for (k, g) in grads.iter().enumerate() {
        let mut grad = model.zeros_like();
        grad.table.weights[[0, 0]] = *g;
        adam_update(&mut model, &grad, &mut state, 0.1);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let t = (k + 1) as i32;
        x -= 0.1 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
        assert_abs_diff_eq!(model.table.weights[[0, 0]], x, epsilon = 1e-14);
    }
    // untouched entries stay put
    assert_eq!(model.table.weights[[1, 1]], t.model.table.weights[[1, 1]]);
}

/// Matrix factorization with BPR and Adam written from scratch.
struct ReferenceMf {
    emb: Vec<Vec<f64>>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl ReferenceMf {
    fn step(&mut self, nu: usize, triples: &[crate::data::Triple], lr: f64) -> f64 {
        let d = self.emb[0].len();
        let mut grad = vec![vec![0.0; d]; self.emb.len()];
        let b = triples.len() as f64;
        let mut loss = 0.0;
        for t in triples {
            let (u, p, n) = (t.user, nu + t.pos, nu + t.neg);
            let margin: f64 = (0..d).map(|k| self.emb[u][k] * (self.emb[p][k] - self.emb[n][k])).sum();
            loss += (1.0 + (-margin).exp()).ln() / b;
            let g = -1.0 / (1.0 + margin.exp()) / b;
            for k in 0..d {
                grad[u][k] += g * (self.emb[p][k] - self.emb[n][k]);
                grad[p][k] += g * self.emb[u][k];
                grad[n][k] -= g * self.emb[u][k];
            }
        }
        self.t += 1;
        for r in 0..self.emb.len() {
            for k in 0..d {
                let g = grad[r][k];
                self.m[r][k] = 0.9 * self.m[r][k] + 0.1 * g;
                self.v[r][k] = 0.999 * self.v[r][k] + 0.001 * g * g;
                let mh = self.m[r][k] / (1.0 - 0.9f64.powi(self.t));
                let vh = self.v[r][k] / (1.0 - 0.999f64.powi(self.t));
                self.emb[r][k] -= lr * mh / (vh.sqrt() + 1e-8);
            }
        }
        loss
    }
}

#[test]
fn reduces_to_matrix_factorization_bpr() {
    let (p, _, _) = fixture();
    let cfg = plain_mf(3);
    let mut trainer = Trainer::new(&p.dataset, Knowledge::default(), cfg.clone()).unwrap();
    let rows: Vec<Vec<f64>> = trainer.model.table.weights.rows().into_iter().map(|r| r.to_vec()).collect();
    let zeros = vec![vec![0.0; cfg.dim]; rows.len()];
    let mut reference = ReferenceMf {
        emb: rows,
        m: zeros.clone(),
        v: zeros,
        t: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed + 1);
    let nu = p.dataset.num_users();
    let mut epoch_means = Vec::new();
    for _ in 0..5 {
        let summary = trainer.train_epoch().unwrap();
        let mut sum = 0.0;
        for r in &trainer.records[trainer.records.len() - summary.steps..] {
            let batch = sample_triples(&p.dataset, cfg.batch_size, &mut rng).unwrap();
            let expect = reference.step(nu, &batch.triples, cfg.lr);
            assert_abs_diff_eq!(r.losses.l_rec, expect, epsilon = 1e-10);
            assert_eq!(r.losses.total, r.losses.l_rec);
            sum += expect;
        }
        epoch_means.push(sum / summary.steps as f64);
    }
    for (r, row) in reference.emb.iter().enumerate() {
        for (k, x) in row.iter().enumerate() {
            assert_abs_diff_eq!(trainer.model.table.weights[[r, k]], *x, epsilon = 1e-9);
        }
    }
    assert!(epoch_means.windows(2).all(|w| w[1] < w[0]), "{epoch_means:?}");
}

#[test]
fn same_seed_same_trajectory() {
    let (p, _, _) = fixture();
    let a = fit(&p.dataset, knowledge(), &small_config()).unwrap();
    let b = fit(&p.dataset, knowledge(), &small_config()).unwrap();
    assert_eq!(metrics_log(&a.steps), metrics_log(&b.steps));
    let bytes = |ck: &Checkpoint| {
        let mut v = Vec::new();
        write_checkpoint(&mut v, ck).unwrap();
        v
    };
    assert_eq!(bytes(&a.best), bytes(&b.best));
}

#[test]
fn ablation_flags_zero_exactly_their_term_on_the_first_step() {
    let (p, _, _) = fixture();
    let first = |ablation: Ablation| {
        let cfg = TrainConfig { ablation, ..small_config() };
        let mut t = Trainer::new(&p.dataset, knowledge(), cfg).unwrap();
        t.step().unwrap().losses
    };
    let full = first(Ablation::default());
    assert!(full.l_prf > 0.0 && full.l_rel > 0.0 && full.l_comp > 0.0);
    let cases: [(Ablation, [bool; 3]); 4] = [
        (Ablation { no_mi_min: true, ..Ablation::default() }, [false, false, true]),
        (Ablation { no_mi_max: true, ..Ablation::default() }, [true, true, false]),
        (Ablation { no_pk: true, ..Ablation::default() }, [true, false, false]),
        (Ablation { no_rk: true, ..Ablation::default() }, [false, true, false]),
    ];
    for (ab, dropped) in cases {
        let l = first(ab);
        assert_eq!(l.l_rec, full.l_rec);
        for ((value, reference), gone) in [l.l_prf, l.l_rel, l.l_comp].into_iter().zip([full.l_prf, full.l_rel, full.l_comp]).zip(dropped) {
            if gone {
                assert_eq!(value, 0.0, "{ab:?}");
            } else {
                assert_eq!(value, reference, "{ab:?}");
            }
        }
    }
}

#[test]
fn no_pk_keeps_prf_zero_for_a_whole_epoch() {
    let (p, _, _) = fixture();
    let cfg = TrainConfig {
        ablation: Ablation { no_pk: true, ..Ablation::default() },
        ..small_config()
    };
    let mut t = Trainer::new(&p.dataset, knowledge(), cfg).unwrap();
    t.train_epoch().unwrap();
    assert!(t.records.iter().all(|r| r.losses.l_prf == 0.0 && r.grad_norms[2] == 0.0));
}

#[test]
fn missing_knowledge_is_a_config_error() {
    let (p, _, _) = fixture();
    assert!(matches!(Trainer::new(&p.dataset, Knowledge::default(), small_config()), Err(Error::Config(_))));
    let cfg = TrainConfig {
        ablation: Ablation { no_pk: true, no_rk: true, ..Ablation::default() },
        ..small_config()
    };
    Trainer::new(&p.dataset, Knowledge::default(), cfg).unwrap();
}

#[test]
fn stopping_rules() {
    // strictly worsening with patience 1: first epoch is the best, the second stops
    let mut s = EarlyStopper::new(1);
    assert_eq!(s.observe(1, 0.5), (true, false));
    assert_eq!(s.observe(2, 0.4), (false, true));

    // improvement at epoch 7 of 10 with patience 3
    let curve = [0.1, 0.2, 0.3, 0.35, 0.36, 0.37, 0.5, 0.4, 0.45, 0.49];
    let mut s = EarlyStopper::new(3);
    let mut ran = 0;
    for (k, &m) in curve.iter().enumerate() {
        ran = k + 1;
        if s.observe(k + 1, m).1 {
            break;
        }
    }
    assert_eq!(ran, 10);
    assert_eq!(s.best, Some((7, 0.5)));
}

#[test]
fn zero_epochs_returns_the_initial_state() {
    let (p, _, _) = fixture();
    let cfg = TrainConfig { max_epochs: 0, ..small_config() };
    let out = fit(&p.dataset, knowledge(), &cfg).unwrap();
    assert!(out.epochs.is_empty() && out.steps.is_empty());
    assert_eq!(out.best.epoch, 0);
    assert_eq!(out.best.best_recall, out.initial_recall);
    let fresh = Trainer::new(&p.dataset, knowledge(), cfg).unwrap();
    assert_eq!(out.best, fresh.checkpoint(out.initial_recall));
}

#[test]
fn fit_keeps_the_best_epoch() {
    let (p, _, _) = fixture();
    let cfg = TrainConfig { max_epochs: 6, patience: 6, ..small_config() };
    let out = fit(&p.dataset, knowledge(), &cfg).unwrap();
    let best = out.epochs.iter().map(|e| e.val_recall).fold(f64::NEG_INFINITY, f64::max);
    let first_best = out.epochs.iter().find(|e| e.val_recall == best).unwrap().summary.epoch;
    assert_eq!(out.best.epoch, first_best);
    assert_eq!(out.best.best_recall, best);
    assert_eq!(out.epoch_log().lines().count(), 7);
}

#[test]
fn untrained_generator_exports_every_edge_at_one_half() {
    let (p, _, _) = fixture();
    let t = Trainer::new(&p.dataset, knowledge(), small_config()).unwrap();
    let mut ck = t.checkpoint(0.0);
    ck.model.mask = MaskGenerator::zeros(ck.model.config.dim, ck.model.config.mask_hidden);
    let text = export_denoised_graph(&ck, &p.dataset, &t.config).unwrap();
    let n = p.dataset.train().len();
    let soft: Vec<&str> = text.lines().skip(1).take(n).collect();
    assert!(soft.iter().all(|l| l.ends_with("\t0.500000000")));
    let hard = text.lines().skip(n + 2).count();
    assert_eq!(hard, n);
    assert_eq!(export_denoised_graph(&ck, &p.dataset, &t.config).unwrap(), text);
}

#[test]
fn checkpoint_reload_reproduces_forward_outputs() {
    let (p, _, _) = fixture();
    let out = fit(&p.dataset, knowledge(), &small_config()).unwrap();
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &out.best).unwrap();
    let back = read_checkpoint(&mut bytes.as_slice()).unwrap();
    assert_eq!(back, out.best);
    let cfg = small_config();
    let graph = build_graph(&p.dataset, &[], None).unwrap();
    let a = representations(&out.best.model, &graph, &cfg, out.best.epoch);
    let b = representations(&back.model, &graph, &cfg, back.epoch);
    assert_eq!(a, b);
}

#[test]
fn metrics_log_layout() {
    let (p, _, _) = fixture();
    let mut t = Trainer::new(&p.dataset, knowledge(), small_config()).unwrap();
    t.step().unwrap();
    t.step().unwrap();
    let log = metrics_log(&t.records);
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1..].iter().all(|l| l.split('\t').count() == 10));
    assert!(lines[2].starts_with("1\t1\t") || lines[2].starts_with("1\t0\t"));
}

#[test]
fn non_finite_loss_aborts_with_step() {
    let (p, _, _) = fixture();
    let mut t = Trainer::new(&p.dataset, Knowledge::default(), plain_mf(2)).unwrap();
    t.step().unwrap();
    t.model.table.weights.fill(f64::NAN);
    match t.step() {
        Err(Error::NonFinite { step, .. }) => assert_eq!(step, 1),
        other => panic!("unexpected {other:?}"),
    }
}
