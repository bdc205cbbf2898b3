//! Template and contrastive explanations built from a prediction trace.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::argumentation::{Polarity, Taf};
use crate::catalog::Catalog;
use crate::context::ContextualSituation;
use crate::error::{Error, Result};
use crate::model::{FeatureOverrides, Model, PredictionBreakdown};

pub const DEFAULT_THETA_LO: f64 = 0.0;
pub const DEFAULT_THETA_HI: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    StrongRecommendation,
    WeakRecommendation,
    NotRecommended,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::StrongRecommendation => "strong_recommendation",
            Scenario::WeakRecommendation => "weak_recommendation",
            Scenario::NotRecommended => "not_recommended",
        }
    }
}

/// Panics if `theta_lo >= theta_hi`.
pub fn classify_scenario(rating: f64, theta_lo: f64, theta_hi: f64) -> Scenario {
    assert!(theta_lo < theta_hi, "scenario thresholds must satisfy lo < hi");
    if rating >= theta_hi {
        Scenario::StrongRecommendation
    } else if rating >= theta_lo {
        Scenario::WeakRecommendation
    } else {
        Scenario::NotRecommended
    }
}

/// How "strongest argument" is measured for templates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ranking {
    /// Effect on the item rating, `weight * strength`.
    #[default]
    Weighted,
    /// The feature rating alone.
    Raw,
}

impl Ranking {
    fn key(self, strength: f64, weight: f64) -> f64 {
        match self {
            Ranking::Weighted => weight * strength,
            Ranking::Raw => strength,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplanationKind {
    Template,
    Contrastive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextCitation {
    pub factor: usize,
    pub condition: usize,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CitedArgument {
    pub item: usize,
    pub feature: usize,
    pub type_idx: usize,
    pub polarity: Polarity,
    pub strength: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub kind: ExplanationKind,
    pub scenario: Scenario,
    pub item: Option<usize>,
    /// The contrasted item for contrastive explanations.
    pub other_item: Option<usize>,
    pub top_context: Option<ContextCitation>,
    pub cited_arguments: Vec<CitedArgument>,
    pub text: String,
    /// Set when the contrasted item lacks the decisive feature type.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextExport {
    pub factor: String,
    pub condition: String,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CitedExport {
    pub item: String,
    pub feature: String,
    pub r#type: String,
    pub polarity: Polarity,
    pub strength: f64,
    pub weight: f64,
}

/// JSON form with labels instead of indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationExport {
    pub kind: ExplanationKind,
    pub scenario: Scenario,
    pub item: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub other_item: Option<String>,
    pub context: Option<ContextExport>,
    pub arguments: Vec<CitedExport>,
    pub text: String,
    pub fallback: bool,
}

impl Explanation {
    pub fn export(&self, catalog: &Catalog) -> ExplanationExport {
        let schema = &catalog.schema;
        ExplanationExport {
            kind: self.kind,
            scenario: self.scenario,
            item: self.item.map(|i| catalog.item_label(i).to_owned()),
            other_item: self.other_item.map(|i| catalog.item_label(i).to_owned()),
            context: self.top_context.as_ref().map(|c| ContextExport {
                factor: schema.factor_name(c.factor).unwrap_or_default().to_owned(),
                condition: schema.condition_name(c.condition).unwrap_or_default().to_owned(),
                importance: c.importance,
            }),
            arguments: self
                .cited_arguments
                .iter()
                .map(|a| CitedExport {
                    item: catalog.item_label(a.item).to_owned(),
                    feature: catalog.feature_label(a.feature).to_owned(),
                    r#type: catalog.type_label(a.type_idx).to_owned(),
                    polarity: a.polarity,
                    strength: a.strength,
                    weight: a.weight,
                })
                .collect(),
            text: self.text.clone(),
            fallback: self.fallback,
        }
    }
}

fn top_context(breakdown: &PredictionBreakdown) -> Option<ContextCitation> {
    breakdown.top_context().map(|f| ContextCitation {
        factor: f.factor,
        condition: f.condition.expect("top context is assigned"),
        importance: f.importance,
    })
}

fn context_phrase(catalog: &Catalog, ctx: Option<&ContextCitation>) -> String {
    match ctx {
        Some(c) => format!(
            " when {} is {}",
            catalog.schema.factor_name(c.factor).unwrap_or_default(),
            catalog.schema.condition_name(c.condition).unwrap_or_default()
        ),
        None => String::new(),
    }
}

fn join_labels(catalog: &Catalog, args: &[&CitedArgument]) -> String {
    args.iter()
        .map(|a| catalog.feature_label(a.feature))
        .collect::<Vec<_>>()
        .join(" and ")
}

fn item_name(catalog: &Catalog, item: Option<usize>) -> String {
    item.map_or_else(|| "this item".to_owned(), |i| catalog.item_label(i).to_owned())
}

fn render_template(catalog: &Catalog, e: &Explanation) -> String {
    let item = item_name(catalog, e.item);
    let ctx = context_phrase(catalog, e.top_context.as_ref());
    let pro: Vec<_> = e.cited_arguments.iter().filter(|a| a.polarity == Polarity::Support).collect();
    let con: Vec<_> = e.cited_arguments.iter().filter(|a| a.polarity != Polarity::Support).collect();
    let mut reasons = Vec::new();
    if !pro.is_empty() {
        reasons.push(format!("you like {}", join_labels(catalog, &pro)));
    }
    if !con.is_empty() {
        reasons.push(format!("you dislike {}", join_labels(catalog, &con)));
    }
    let because = if reasons.is_empty() {
        String::new()
    } else {
        format!(" because {}", reasons.join(" but "))
    };
    match e.scenario {
        Scenario::StrongRecommendation => format!("We strongly recommend {item}{ctx}{because}."),
        Scenario::WeakRecommendation => format!("We recommend {item}{ctx}{because}."),
        Scenario::NotRecommended => format!("We do not recommend {item}{ctx}{because}."),
    }
}

fn by_key_desc(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

/// Template explanation ranking arguments by weighted contribution.
pub fn template_explanation(
    catalog: &Catalog,
    breakdown: &PredictionBreakdown,
    taf: &Taf,
    scenario: Scenario,
) -> Result<Explanation> {
    template_explanation_ranked(catalog, breakdown, taf, scenario, Ranking::Weighted)
}

/// Strong: the two strongest supporters. Weak: the strongest supporter and
/// the strongest attacker. Not recommended: the two strongest attackers.
/// Cites fewer when fewer exist.
pub fn template_explanation_ranked(
    catalog: &Catalog,
    breakdown: &PredictionBreakdown,
    taf: &Taf,
    scenario: Scenario,
    ranking: Ranking,
) -> Result<Explanation> {
    if taf.arguments.is_empty() {
        return Err(Error::invalid("cannot explain an item with no features"));
    }
    let item = taf.item.unwrap_or(usize::MAX);
    let mut supporters: Vec<_> = taf.supporters().collect();
    let mut attackers: Vec<_> = taf.attackers().collect();
    // Stable sorts keep feature order on ties.
    supporters.sort_by(|a, b| by_key_desc(ranking.key(a.strength, a.weight), ranking.key(b.strength, b.weight)));
    attackers.sort_by(|a, b| by_key_desc(ranking.key(b.strength, b.weight), ranking.key(a.strength, a.weight)));
    let chosen: Vec<_> = match scenario {
        Scenario::StrongRecommendation => supporters.into_iter().take(2).collect(),
        Scenario::WeakRecommendation => supporters.into_iter().take(1).chain(attackers.into_iter().take(1)).collect(),
        Scenario::NotRecommended => attackers.into_iter().take(2).collect(),
    };
    let mut e = Explanation {
        kind: ExplanationKind::Template,
        scenario,
        item: taf.item,
        other_item: None,
        top_context: top_context(breakdown),
        cited_arguments: chosen
            .into_iter()
            .map(|a| CitedArgument {
                item,
                feature: a.feature,
                type_idx: a.type_idx,
                polarity: a.polarity,
                strength: a.strength,
                weight: a.weight,
            })
            .collect(),
        text: String::new(),
        fallback: false,
    };
    e.text = render_template(catalog, &e);
    Ok(e)
}

/// `(feature, type, P, weight, pi_t * P)` for each feature of the item.
fn scored_features(b: &PredictionBreakdown) -> Vec<(usize, usize, f64, f64, f64)> {
    let mut v: Vec<_> = b
        .attributions()
        .map(|a| (a.feature, a.type_idx, a.rating, a.weight, a.type_importance * a.rating))
        .collect();
    v.sort_by_key(|s| s.0);
    v
}

/// First index achieving the extreme under `better(candidate, best)`.
fn pick<T>(items: &[T], key: impl Fn(&T) -> f64, better: impl Fn(f64, f64) -> bool) -> Option<&T> {
    let mut best: Option<(&T, f64)> = None;
    for it in items {
        let k = key(it);
        match best {
            Some((_, bk)) if !better(k, bk) => {}
            _ => best = Some((it, k)),
        }
    }
    best.map(|(it, _)| it)
}

/// "Why this item and not that one": the best and worst candidates, with the
/// decisive feature of the best and the worst feature of the same type on
/// the other. Ties go to the lowest item or feature index.
#[allow(clippy::too_many_arguments)]
pub fn contrastive_explanation(
    model: &Model,
    catalog: &Catalog,
    user: usize,
    cs: &ContextualSituation,
    candidates: &[usize],
    overrides: &FeatureOverrides,
    theta_lo: f64,
    theta_hi: f64,
) -> Result<Explanation> {
    let mut ids: Vec<usize> = candidates.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::invalid("contrastive explanation needs at least two candidate items"));
    }
    let mut scored = Vec::with_capacity(ids.len());
    for &i in &ids {
        if catalog.item(i)?.num_features() == 0 {
            continue;
        }
        scored.push(model.predict(catalog, user, i, cs, overrides)?);
    }
    if scored.len() < 2 {
        return Err(Error::invalid("contrastive explanation needs at least two items with features"));
    }
    let rec = pick(&scored, |b| b.rating, |k, best| k > best).expect("non-empty");
    let rec_item = rec.item.expect("predicted from catalog");
    let rest: Vec<_> = scored.iter().filter(|b| b.item != Some(rec_item)).cloned().collect();
    let con = pick(&rest, |b| b.rating, |k, best| k < best).expect("non-empty");
    let con_item = con.item.expect("predicted from catalog");

    let rec_feats = scored_features(rec);
    let pro = *pick(&rec_feats, |f| f.4, |k, best| k > best).expect("item has features");
    let con_feats = scored_features(con);
    let same_type: Vec<_> = con_feats.iter().copied().filter(|f| f.1 == pro.1).collect();
    let fallback = same_type.is_empty();
    let pool = if fallback { &con_feats } else { &same_type };
    let against = *pick(pool, |f| f.4, |k, best| k < best).expect("item has features");

    let cite = |item: usize, f: (usize, usize, f64, f64, f64)| CitedArgument {
        item,
        feature: f.0,
        type_idx: f.1,
        polarity: Polarity::classify(f.2, 0.0),
        strength: f.2,
        weight: f.3,
    };
    let rec_name = catalog.item_label(rec_item);
    let con_name = catalog.item_label(con_item);
    let pro_name = catalog.feature_label(pro.0);
    let text = format!(
        "We recommend {rec_name} over {con_name} because you prefer {pro_name}; {rec_name} is {pro_name} while {con_name} is {}",
        catalog.feature_label(against.0)
    );
    Ok(Explanation {
        kind: ExplanationKind::Contrastive,
        scenario: classify_scenario(rec.rating, theta_lo, theta_hi),
        item: Some(rec_item),
        other_item: Some(con_item),
        top_context: top_context(rec),
        cited_arguments: vec![cite(rec_item, pro), cite(con_item, against)],
        text,
        fallback,
    })
}
