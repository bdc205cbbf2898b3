//! Straight-line transcription of the forward pass, swept over every small
//! shape: up to 3 factors, 3 types, 4 features.

use cafata_core::model::{EmbeddingSpace, SpaceShape};
use cafata_core::{
    Catalog, ContextSchema, ContextualSituation, FeatureOverrides, ItemFeatures, Model, ModelConfig, Variant,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-9;

/// Computes the rating with plain loops and no shared helpers.
pub fn oracle(model: &Model, schema: &ContextSchema, user: usize, item: &ItemFeatures, cs: &ContextualSituation) -> f64 {
    let s = &model.space;
    let d = s.dim;
    let slope = model.config.leaky_relu_slope;
    let lrelu = |x: f64| if x > 0.0 { x } else { slope * x };
    let variant = model.config.variant;

    let mut u = vec![0.0; d];
    for j in 0..d {
        u[j] = s.users.row(user)[j];
    }

    // Step 1: context.
    let mut ucs = u.clone();
    if matches!(variant, Variant::CaFata | Variant::AvgCaFata) && !cs.is_empty() {
        let nf = s.factors.rows();
        let mut e = vec![0.0; nf];
        let mut z = 0.0;
        for f in 0..nf {
            let mut beta = 0.0;
            for j in 0..d {
                beta += u[j] * s.factors.row(f)[j];
            }
            e[f] = lrelu(beta).exp();
            z += e[f];
        }
        for &c in cs.conditions() {
            let f = schema.condition_factor(c).unwrap();
            let pi = e[f] / z;
            for j in 0..d {
                ucs[j] += pi * s.conditions.row(c)[j];
            }
        }
    }

    // Step 2: type importance over the item's own types.
    let nt = item.groups.len();
    let mut pi_t = vec![0.0; nt];
    if matches!(variant, Variant::CaFata | Variant::Fata) {
        let mut z = 0.0;
        for (k, g) in item.groups.iter().enumerate() {
            let mut beta = 0.0;
            for j in 0..d {
                beta += ucs[j] * s.types.row(g.type_idx)[j];
            }
            pi_t[k] = lrelu(beta).exp();
            z += pi_t[k];
        }
        for p in pi_t.iter_mut() {
            *p /= z;
        }
    } else {
        for p in pi_t.iter_mut() {
            *p = 1.0 / nt as f64;
        }
    }

    // Steps 3 and 4.
    let mut r = 0.0;
    for (k, g) in item.groups.iter().enumerate() {
        let mut contr = 0.0;
        for &f in &g.features {
            let mut p = 0.0;
            for j in 0..d {
                p += ucs[j] * s.features.row(f)[j];
            }
            contr += p;
        }
        contr /= g.features.len() as f64;
        r += pi_t[k] * contr;
    }
    r
}

/// One item with `split[t]` features of type `t`, on a schema whose factors
/// have `conds[f]` named conditions.
fn instance(conds: &[usize], split: &[usize], dim: usize, variant: Variant, rng: &mut ChaCha8Rng) -> (Model, Catalog) {
    let schema = ContextSchema::new(
        conds
            .iter()
            .enumerate()
            .map(|(f, &n)| (format!("f{f}"), (0..n).map(|c| format!("c{c}")).collect::<Vec<_>>())),
    )
    .unwrap();
    let mut triples = Vec::new();
    for (t, &n) in split.iter().enumerate() {
        for k in 0..n {
            triples.push(("item".to_owned(), format!("t{t}"), format!("t{t}a{k}")));
        }
    }
    let mut catalog = Catalog::from_triples(triples, schema).unwrap();
    catalog.users.intern("u");
    let config = ModelConfig {
        dim,
        variant,
        leaky_relu_slope: rng.random_range(0.01..0.3),
        seed: 0,
    };
    let space = EmbeddingSpace::uniform(dim, SpaceShape::of(&catalog), rng.random_range(0.3..2.0), rng);
    (Model::new(config, space).unwrap(), catalog)
}

/// Every complete situation over the schema, plus the empty one.
fn situations(schema: &ContextSchema) -> Vec<ContextualSituation> {
    let mut all = vec![Vec::new()];
    for f in 0..schema.num_factors() {
        let mut next = Vec::new();
        for partial in &all {
            for &c in schema.conditions_of(f) {
                let mut v: Vec<usize> = partial.clone();
                v.push(c);
                next.push(v);
            }
        }
        all = next;
    }
    let mut out = vec![ContextualSituation::empty()];
    if schema.num_factors() > 0 {
        out.extend(all.into_iter().map(|v| ContextualSituation::new(v, schema).unwrap()));
    }
    out
}

/// Ways to spread `n` features over `types` types, each type non-empty.
pub fn splits(n: usize, types: usize) -> Vec<Vec<usize>> {
    if types == 1 {
        return vec![vec![n]];
    }
    let mut out = Vec::new();
    for first in 1..=n.saturating_sub(types - 1) {
        for mut rest in splits(n - first, types - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

#[derive(Debug, Default)]
pub struct Sweep {
    pub cases: usize,
    pub worst: f64,
    pub failures: Vec<String>,
}

/// All variants, three random models per shape, every situation.
pub fn sweep(seed: u64) -> Sweep {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Sweep::default();
    for factors in 0..=3 {
        for types in 1..=3 {
            for features in types..=4 {
                for split in splits(features, types) {
                    for variant in Variant::ALL {
                        for _ in 0..3 {
                            let conds: Vec<usize> = (0..factors).map(|_| rng.random_range(1..=2)).collect();
                            let dim = rng.random_range(1..=4);
                            let (model, catalog) = instance(&conds, &split, dim, variant, &mut rng);
                            let item = catalog.item(0).unwrap();
                            for cs in situations(&catalog.schema) {
                                let got = model
                                    .forward(&catalog.schema, 0, item, &cs, &FeatureOverrides::new())
                                    .unwrap()
                                    .rating;
                                let want = oracle(&model, &catalog.schema, 0, item, &cs);
                                let err = (got - want).abs();
                                if !(err <= TOL) {
                                    out.failures.push(format!(
                                        "{variant} factors={conds:?} split={split:?} cs={cs:?}: {got} vs {want}"
                                    ));
                                }
                                out.worst = out.worst.max(err);
                                out.cases += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
