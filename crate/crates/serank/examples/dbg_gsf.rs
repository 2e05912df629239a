use serank::autodiff::{grad_check, Graph, NodeId, Tensor};
use serank::loss::{query_loss, GainKind, LossKind, LossSpec, QueryLoss};
use serank::model::{init, Bound, Mode, ModelSpec, Variant};
use serank::rng::rng_from_seed;
use rand::Rng;

fn main() {
    let seed = 1000 + (1 * 3 + 2) as u64; // vi=1 (gsf), li=2 (softmax)
    let mut rng = rng_from_seed(seed);
    let mut spec = ModelSpec::new(Variant::Gsf, 10);
    spec.hidden_widths = vec![6, 4];
    spec.group_size = 2;
    spec.seed = seed;
    let model = init(&spec).unwrap();
    let x = {
        let data = (0..6 * 10).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(vec![6, 10], data).unwrap()
    }
    .with_grad();
    let labels: Vec<u32> = (0..6).map(|_| rng.random_range(0..=4)).collect();
    let labels = if labels.iter().all(|&l| l == 0) { vec![1, 0, 2, 0, 1, 0] } else { labels };
    println!("labels {labels:?}");
    let mask = vec![true; 6];
    let lspec = LossSpec { kind: LossKind::SoftmaxCe, gain: GainKind::Pow2Minus1, lambda_normalize: true };

    let mut leaves = vec![x];
    let mut names = vec!["X".to_string()];
    for p in model.params() {
        leaves.push(p.tensor.clone().with_grad());
        names.push(p.name.clone());
    }
    let model_ref = &model;
    let labels_ref = &labels;
    let mask_ref = &mask;
    let report = grad_check(
        move |g: &mut Graph, ids: &[NodeId]| {
            let bound = Bound { ids: ids[1..].to_vec() };
            let fwd = model_ref.forward_batch(g, &bound, &[(ids[0], mask_ref)], &Mode::Train { step_seed: 99 })?;
            match query_loss(g, &lspec, fwd.scores[0], labels_ref, mask_ref)? {
                QueryLoss::Node(n) => Ok(n),
                QueryLoss::Skipped => unreachable!(),
            }
        },
        &leaves,
        1e-5,
        1e-4,
    )
    .unwrap();
    println!("max rel err {}", report.max_rel_err);
    for f in report.failures.iter().take(12) {
        println!(
            "leaf {} ({}) idx {}: analytic {:.9e} numeric {:.9e} err {:.3e}",
            f.leaf, names[f.leaf], f.index, f.analytic, f.numeric, f.rel_err
        );
    }
}
