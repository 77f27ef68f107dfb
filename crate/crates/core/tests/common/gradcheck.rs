use feasible_cf::classifier::Classifier;
use feasible_cf::feasibility::{
    fit_monotonic_linear, monotonic_penalty, CausalProximity, CausalProximityConfig, ConstraintPenalties, Direction,
    MonotonicConstraint, Sign, UnaryConstraint,
};
use feasible_cf::nn::{sigmoid, Activation, Mlp, MlpSpec, Tape, Tensor, Var};
use feasible_cf::oracle::{record_finetune_loss, record_label_term, FinetuneConfig};
use feasible_cf::pipeline::SimpleBnData;
use feasible_cf::rng;
use feasible_cf::vae::{
    record_cf_loss, record_hinge, standard_normal, CfObjective, CfVae, L1Objective, LatentPrior, VaeTrainConfig,
};
use rand::Rng;

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Evaluation points closer than this to a non-differentiable point are rejected.
pub const KINK_MARGIN: f64 = 1e-3;
/// Lower bound on the relative-error denominator.
pub const FLOOR: f64 = 1e-4;

const ROWS: usize = 3;
const LATENT: usize = 3;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Worst relative error between `grad` and central differences of `f` at `theta`.
pub fn max_rel_err(theta: &[f64], grad: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    assert_eq!(theta.len(), grad.len());
    let mut t = theta.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        t[i] = theta[i] + EPS;
        let up = f(&t);
        t[i] = theta[i] - EPS;
        let down = f(&t);
        t[i] = theta[i];
        worst = worst.max(rel_err(grad[i], (up - down) / (2.0 * EPS)));
    }
    worst
}

fn min_abs(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().map(f64::abs).fold(f64::INFINITY, f64::min)
}

/// Smallest |pre-activation| entering a ReLU in `net` on `input`, and the output.
pub fn relu_margin(net: &Mlp, input: &Tensor) -> (f64, Tensor) {
    let p = net.params();
    let mut h = input.clone();
    let mut margin = f64::INFINITY;
    for (i, act) in net.spec().activations.iter().enumerate() {
        let mut pre = h.matmul(&p[2 * i]).unwrap();
        let cols = pre.cols();
        for (k, v) in pre.values_mut().iter_mut().enumerate() {
            *v += p[2 * i + 1].get(0, k % cols);
        }
        h = match act {
            Activation::Relu => {
                margin = margin.min(min_abs(pre.values().iter().copied()));
                pre.map(|v| v.max(0.0))
            }
            Activation::Sigmoid => pre.map(sigmoid),
            Activation::Identity => pre,
        };
    }
    (margin, h)
}

fn append_class(x: &Tensor, targets: &[usize]) -> Tensor {
    let rows: Vec<Vec<f64>> = x
        .to_rows()
        .into_iter()
        .zip(targets)
        .map(|(mut r, &t)| {
            r.push(t as f64);
            r
        })
        .collect();
    Tensor::from_rows(&rows).unwrap()
}

fn random_tensor(rows: usize, cols: usize, lo: f64, hi: f64, r: &mut impl Rng) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

/// A small seeded generator, classifier and batch on Simple-BN features.
pub struct Fixture {
    pub seed: u64,
    pub vae: CfVae,
    pub classifier: Classifier,
    pub classifier3: Classifier,
    pub x: Tensor,
    pub targets: Vec<usize>,
    pub targets3: Vec<usize>,
    pub eps: Tensor,
    pub xcf_point: Tensor,
    pub proximity: CausalProximity,
    pub penalties: ConstraintPenalties,
    pub monotonic: MonotonicConstraint,
    pub candidates: Tensor,
    pub labels: Vec<f64>,
    pub weights: Vec<f64>,
    pub config: VaeTrainConfig,
    pub finetune: FinetuneConfig,
    pub schema: feasible_cf::data::FeatureSchema,
}

impl Fixture {
    pub fn new(seed: u64) -> Self {
        let data = SimpleBnData::generate(400, seed).unwrap();
        let schema = data.data.schema.clone();
        let d = schema.encoded_width();
        let mut r = rng::derive(seed, 900);
        let net = |widths: Vec<usize>, out: Activation, r: &mut rng::SeededRng| {
            Mlp::init(MlpSpec::uniform(widths, Activation::Relu, out, 0.0).unwrap(), r).unwrap()
        };
        let em = net(vec![d + 1, 6, 5, LATENT], Activation::Identity, &mut r);
        let es = net(vec![d + 1, 6, 5, LATENT], Activation::Sigmoid, &mut r);
        let dec = net(vec![LATENT + 1, 5, 6, d], Activation::Sigmoid, &mut r);
        let prior = LatentPrior {
            means: (0..2).map(|_| (0..LATENT).map(|_| r.random_range(-0.5..0.5)).collect()).collect(),
            stds: (0..2).map(|_| (0..LATENT).map(|_| r.random_range(0.5..1.5)).collect()).collect(),
        };
        let vae = CfVae::from_networks(em, es, dec, prior).unwrap();
        let classifier = Classifier::from_mlp(Mlp::init(Classifier::spec(d, 5, 2).unwrap(), &mut r).unwrap()).unwrap();
        let classifier3 = Classifier::from_mlp(Mlp::init(Classifier::spec(d, 5, 3).unwrap(), &mut r).unwrap()).unwrap();
        let picks: Vec<usize> = (0..ROWS).map(|_| r.random_range(0..data.train.len())).collect();
        let x = Tensor::from_rows(&picks.iter().map(|&i| data.train.encoded[i].clone()).collect::<Vec<_>>()).unwrap();
        let targets: Vec<usize> = (0..ROWS).map(|_| r.random_range(0..2)).collect();
        let targets3: Vec<usize> = (0..ROWS).map(|_| r.random_range(0..3)).collect();
        let eps = standard_normal(ROWS, LATENT, &mut r);
        let xcf_point = random_tensor(ROWS, d, 0.05, 0.95, &mut r);
        let proximity = CausalProximity::new(&schema, &data.scm, CausalProximityConfig::from_scm(&data.scm, 3.0)).unwrap();
        let monotonic = fit_monotonic_linear(
            &data.train,
            &MonotonicConstraint::new(SimpleBnData::causes(), SimpleBnData::effect(), Sign::Increasing),
        )
        .unwrap();
        let unary = UnaryConstraint {
            feature: "x1".into(),
            direction: Direction::NonDecrease,
        };
        let penalties = ConstraintPenalties::new(&schema, &[unary], std::slice::from_ref(&monotonic), 2.0).unwrap();
        let finetune = FinetuneConfig::simple_bn(seed);
        let xcf = vae.generate_batch(&x.to_rows(), &targets, 1, &mut rng::seeded(seed)).unwrap();
        let jitter = random_tensor(ROWS, d, -0.05, 0.05, &mut r);
        let candidates = Tensor::from_rows(&xcf).unwrap().zip_map(&jitter, |a, b| a + b);
        let labels: Vec<f64> = (0..ROWS).map(|_| r.random_range(0..2) as f64).collect();
        let weights: Vec<f64> = (0..ROWS).map(|_| r.random_range(0.5..1.5)).collect();
        Fixture {
            seed,
            vae,
            classifier,
            classifier3,
            x,
            targets,
            targets3,
            eps,
            xcf_point,
            proximity,
            penalties,
            monotonic,
            candidates,
            labels,
            weights,
            config: VaeTrainConfig::default(),
            finetune,
            schema,
        }
    }

    /// Deterministic evaluation-mode counterfactuals of the fixture batch.
    pub fn xcf(&self, vae: &CfVae) -> Tensor {
        let xin = append_class(&self.x, &self.targets);
        let mean = vae.encoder_mean.infer(&xin).unwrap();
        let std = vae.encoder_std.infer(&xin).unwrap();
        let z = mean.zip_map(&std.zip_map(&self.eps, |s, e| s * e), |m, n| m + n);
        vae.decoder.infer(&append_class(&z, &self.targets)).unwrap()
    }

    fn loss_margins(&self, x: &Tensor, xcf: &Tensor, classifier: &Classifier, targets: &[usize]) -> f64 {
        let margin = self.config.margin;
        let (mut worst, logits) = relu_margin(classifier.mlp(), xcf);
        let scores = {
            let mut s = logits.clone();
            let c = s.cols();
            for row in s.values_mut().chunks_mut(c) {
                feasible_cf::nn::softmax_in_place(row);
            }
            s
        };
        for (i, &t) in targets.iter().enumerate() {
            let row = scores.row_slice(i);
            let mut others: Vec<f64> = row.iter().enumerate().filter(|(c, _)| *c != t).map(|(_, &s)| s).collect();
            others.sort_by(|a, b| b.total_cmp(a));
            worst = worst.min((others[0] - row[t] + margin).abs());
            if others.len() > 1 {
                worst = worst.min(others[0] - others[1]);
            }
        }
        worst = worst.min(min_abs(x.values().iter().zip(xcf.values()).map(|(a, b)| b - a)));
        for cr in xcf.to_rows() {
            for v in &self.proximity.config().endogenous {
                worst = worst.min(self.proximity.dist_causal_node(v, &cr).unwrap());
            }
            worst = worst.min(monotonic_penalty(&self.schema, &cr, &self.monotonic).unwrap());
        }
        worst
    }

    /// Distance to the nearest kink over every loss checked at this fixture.
    pub fn kink_distance(&self) -> f64 {
        let xin = append_class(&self.x, &self.targets);
        let (a, mean) = relu_margin(&self.vae.encoder_mean, &xin);
        let (b, std) = relu_margin(&self.vae.encoder_std, &xin);
        let z = mean.zip_map(&std.zip_map(&self.eps, |s, e| s * e), |m, n| m + n);
        let (c, xcf) = relu_margin(&self.vae.decoder, &append_class(&z, &self.targets));
        let generated = self.loss_margins(&self.x, &xcf, &self.classifier, &self.targets);
        let direct = self.loss_margins(&self.x, &self.xcf_point, &self.classifier, &self.targets);
        let three = self.loss_margins(&self.x, &self.xcf_point, &self.classifier3, &self.targets3);
        [a, b, c, generated, direct, three].into_iter().fold(f64::INFINITY, f64::min)
    }
}

pub fn flat(vae: &CfVae) -> Vec<f64> {
    vae.params_flat()
}

pub fn with_flat(vae: &CfVae, theta: &[f64]) -> CfVae {
    let mut out = vae.clone();
    let mut k = 0;
    for net in [&mut out.encoder_mean, &mut out.encoder_std, &mut out.decoder] {
        for p in net.params_mut() {
            let n = p.len();
            p.values_mut().copy_from_slice(&theta[k..k + n]);
            k += n;
        }
    }
    assert_eq!(k, theta.len());
    out
}

fn grads_of(tape: &Tape, loss: Var, vars: &[Var]) -> Vec<f64> {
    let g = tape.backward(loss).unwrap();
    vars.iter()
        .flat_map(|&v| g.wrt_or_zeros(v, tape.value(v).shape()).into_values())
        .collect()
}

/// A scalar loss over the generator's parameters.
pub trait VaeLoss {
    fn record(&self, fx: &Fixture, tape: &mut Tape, vae: &CfVae) -> (Var, Vec<Var>);
}

pub fn check_vae_loss(fx: &Fixture, loss: &dyn VaeLoss) -> f64 {
    let mut tape = Tape::new();
    let (l, params) = loss.record(fx, &mut tape, &fx.vae);
    let grad = grads_of(&tape, l, &params);
    max_rel_err(&flat(&fx.vae), &grad, |theta| {
        let vae = with_flat(&fx.vae, theta);
        let mut tape = Tape::new();
        let (l, _) = loss.record(fx, &mut tape, &vae);
        tape.value(l).item()
    })
}

/// Generator objective with a pluggable proximity or penalty term.
pub struct GeneratorLoss<'a>(pub &'a dyn CfObjective);

impl VaeLoss for GeneratorLoss<'_> {
    fn record(&self, fx: &Fixture, tape: &mut Tape, vae: &CfVae) -> (Var, Vec<Var>) {
        let mut r = rng::seeded(0);
        let l = record_cf_loss(tape, vae, &fx.classifier, &fx.x, &fx.targets, &fx.eps, &fx.config, self.0, false, &mut r).unwrap();
        (tape.mean(l.rows), l.pass.params)
    }
}

pub struct KlLoss;

impl VaeLoss for KlLoss {
    fn record(&self, fx: &Fixture, tape: &mut Tape, vae: &CfVae) -> (Var, Vec<Var>) {
        let pass = vae.record(tape, &fx.x, &fx.targets, &fx.eps, false, &mut rng::seeded(0)).unwrap();
        let kl = vae.record_kl(tape, &pass, &fx.targets);
        (tape.mean(kl), pass.params)
    }
}

pub struct FinetuneLoss;

impl VaeLoss for FinetuneLoss {
    fn record(&self, fx: &Fixture, tape: &mut Tape, vae: &CfVae) -> (Var, Vec<Var>) {
        let (l, pass) = record_finetune_loss(
            tape,
            vae,
            &fx.classifier,
            &fx.x,
            &fx.candidates,
            &fx.targets,
            &fx.labels,
            &fx.weights,
            &fx.eps,
            &fx.finetune,
            &L1Objective,
            false,
            &mut rng::seeded(0),
        )
        .unwrap();
        (l, pass.params)
    }
}

/// Checks a loss with respect to a counterfactual batch held as a parameter leaf.
pub fn check_xcf_loss(fx: &Fixture, record: impl Fn(&mut Tape, Var, Var) -> Var) -> f64 {
    let eval = |xcf: &Tensor| -> (Tape, Var, Var) {
        let mut tape = Tape::new();
        let x = tape.leaf(fx.x.clone());
        let v = tape.param(xcf.clone());
        let rows = record(&mut tape, x, v);
        let l = tape.mean(rows);
        (tape, l, v)
    };
    let (tape, l, v) = eval(&fx.xcf_point);
    let grad = grads_of(&tape, l, &[v]);
    let [r, c] = fx.xcf_point.shape();
    max_rel_err(fx.xcf_point.values(), &grad, |theta| {
        let (tape, l, _) = eval(&Tensor::new(r, c, theta.to_vec()).unwrap());
        tape.value(l).item()
    })
}

/// Named worst-case relative errors of every checked loss at one fixture.
pub fn check_all(fx: &Fixture) -> Vec<(&'static str, f64)> {
    let margin = fx.config.margin;
    vec![
        ("generator objective, l1", check_vae_loss(fx, &GeneratorLoss(&L1Objective))),
        ("generator objective, causal proximity", check_vae_loss(fx, &GeneratorLoss(&fx.proximity))),
        ("generator objective, constraint penalties", check_vae_loss(fx, &GeneratorLoss(&fx.penalties))),
        ("kl", check_vae_loss(fx, &KlLoss)),
        ("fine-tune objective", check_vae_loss(fx, &FinetuneLoss)),
        (
            "hinge validity, two classes",
            check_xcf_loss(fx, |t, _, xcf| {
                let s = fx.classifier.record_scores(t, xcf).unwrap();
                record_hinge(t, s, &fx.targets, margin)
            }),
        ),
        (
            "hinge validity, three classes",
            check_xcf_loss(fx, |t, _, xcf| {
                let s = fx.classifier3.record_scores(t, xcf).unwrap();
                record_hinge(t, s, &fx.targets3, margin)
            }),
        ),
        ("causal proximity", check_xcf_loss(fx, |t, x, xcf| fx.proximity.record(t, x, xcf))),
        ("constraint penalties", check_xcf_loss(fx, |t, x, xcf| fx.penalties.record(t, x, xcf).unwrap())),
        (
            "fine-tune label term",
            check_xcf_loss(fx, |t, _, xcf| {
                record_label_term(t, xcf, &fx.candidates, &fx.labels, fx.finetune.bandwidth)
            }),
        ),
    ]
}

/// The first `n` candidate seeds whose fixtures keep clear of every kink.
pub fn accepted_fixtures(n: usize) -> (Vec<Fixture>, usize) {
    let mut out = Vec::new();
    let mut rejected = 0;
    for seed in 0.. {
        if out.len() == n {
            break;
        }
        let fx = Fixture::new(seed);
        if fx.kink_distance() > KINK_MARGIN {
            out.push(fx);
        } else {
            rejected += 1;
        }
    }
    (out, rejected)
}
