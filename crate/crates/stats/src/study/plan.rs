use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::describe::derive_seed;
use crate::{Result, StatsError};

/// Display order of one item: `order[position]` is the index of the method shown there.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemOrder {
    pub item: String,
    pub order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantPlan {
    pub name: String,
    pub items: Vec<ItemOrder>,
}

/// Randomized questionnaire layouts. The plan doubles as the de-randomization key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionnairePlan {
    pub seed: u64,
    pub methods: Vec<String>,
    pub variants: Vec<VariantPlan>,
}

fn variant_name(k: usize) -> String {
    // A, B, ..., Z, AA, AB, ...
    let mut k = k;
    let mut s = Vec::new();
    loop {
        s.push(b'A' + (k % 26) as u8);
        if k < 26 {
            break;
        }
        k = k / 26 - 1;
    }
    s.reverse();
    String::from_utf8(s).unwrap()
}

/// Builds `n_variants` sheets, each shuffling the method order of every item independently.
pub fn make_questionnaire_plan(
    items: &[String],
    methods: &[String],
    n_variants: usize,
    seed: u64,
) -> Result<QuestionnairePlan> {
    if methods.len() < 2 {
        return Err(StatsError::InvalidArgument("a questionnaire needs at least two methods".into()));
    }
    if n_variants == 0 {
        return Err(StatsError::InvalidArgument("n_variants must be at least 1".into()));
    }
    let mut seen = HashSet::new();
    for it in items {
        if !seen.insert(it) {
            return Err(StatsError::InvalidArgument(format!("duplicate item {it:?}")));
        }
    }
    let mut seen = HashSet::new();
    for m in methods {
        if !seen.insert(m) {
            return Err(StatsError::InvalidArgument(format!("duplicate method {m:?}")));
        }
    }
    let variants = (0..n_variants)
        .map(|v| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, v as u64));
            let items = items
                .iter()
                .map(|item| {
                    let mut order: Vec<usize> = (0..methods.len()).collect();
                    order.shuffle(&mut rng);
                    ItemOrder { item: item.clone(), order }
                })
                .collect();
            VariantPlan { name: variant_name(v), items }
        })
        .collect();
    Ok(QuestionnairePlan { seed, methods: methods.to_vec(), variants })
}

impl QuestionnairePlan {
    fn item_order(&self, variant: &str, item: &str) -> Result<&[usize]> {
        let v = self
            .variants
            .iter()
            .find(|v| v.name == variant)
            .ok_or_else(|| StatsError::InvalidArgument(format!("unknown variant {variant:?}")))?;
        v.items
            .iter()
            .find(|o| o.item == item)
            .map(|o| o.order.as_slice())
            .ok_or_else(|| StatsError::InvalidArgument(format!("unknown item {item:?}")))
    }

    /// Variant handed to the `rater_index`-th rater (round robin).
    pub fn variant_for_rater(&self, rater_index: usize) -> &str {
        &self.variants[rater_index % self.variants.len()].name
    }

    /// Canonical (method-ordered) values to the order shown on the sheet.
    pub fn randomize<T: Clone>(&self, variant: &str, item: &str, canonical: &[T]) -> Result<Vec<T>> {
        let order = self.item_order(variant, item)?;
        self.check_len(canonical.len())?;
        Ok(order.iter().map(|&m| canonical[m].clone()).collect())
    }

    /// Values in sheet order back to canonical method order.
    pub fn derandomize<T: Clone>(&self, variant: &str, item: &str, shown: &[T]) -> Result<Vec<T>> {
        let order = self.item_order(variant, item)?;
        self.check_len(shown.len())?;
        let mut out: Vec<Option<T>> = vec![None; shown.len()];
        for (pos, &m) in order.iter().enumerate() {
            out[m] = Some(shown[pos].clone());
        }
        Ok(out.into_iter().map(|v| v.expect("order is a permutation")).collect())
    }

    /// Method displayed at `position` of `item` on sheet `variant`.
    pub fn method_at(&self, variant: &str, item: &str, position: usize) -> Result<&str> {
        let order = self.item_order(variant, item)?;
        order
            .get(position)
            .map(|&m| self.methods[m].as_str())
            .ok_or_else(|| StatsError::InvalidArgument(format!("position {position} out of range")))
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.methods.len() {
            return Err(StatsError::InvalidArgument(format!(
                "expected {} values, got {n}",
                self.methods.len()
            )));
        }
        Ok(())
    }
}
