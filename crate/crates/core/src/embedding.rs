//! Item and category embedding tables. A behavior's vector is the
//! concatenation of its item row and its category row; row 0 of each table
//! is the frozen all-zero padding row.

use rand::Rng;

use crate::data::Behavior;
use crate::error::Result;
use crate::nn::layers::uniform;
use crate::nn::{ParamId, ParameterStore, Tape, Tensor2D, Var};

#[derive(Clone, Debug)]
pub struct EmbeddingTables {
    pub item: ParamId,
    pub category: ParamId,
    pub item_dim: usize,
    pub category_dim: usize,
}

impl EmbeddingTables {
    /// Vocabulary sizes include the padding row.
    pub fn new(
        store: &mut ParameterStore,
        items: usize,
        categories: usize,
        item_dim: usize,
        category_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let init = |rng: &mut _, rows: usize, dim: usize| uniform(rng, rows.max(1), dim, 1.0 / (dim as f64).sqrt());
        let item = store.add_embedding("embedding.item", init(rng, items, item_dim))?;
        let category = store.add_embedding("embedding.category", init(rng, categories, category_dim))?;
        Ok(EmbeddingTables { item, category, item_dim, category_dim })
    }

    /// Behavior width `d`.
    pub fn dim(&self) -> usize {
        self.item_dim + self.category_dim
    }

    /// Rows of behavior vectors on the tape.
    pub fn embed(&self, tape: &mut Tape, items: &[u32], categories: &[u32]) -> Result<Var> {
        let i = tape.embed(self.item, items.iter().map(|&x| x as usize).collect())?;
        let c = tape.embed(self.category, categories.iter().map(|&x| x as usize).collect())?;
        tape.concat_cols(&[i, c])
    }

    /// Single behavior vector read straight from the tables.
    pub fn embed_behavior(&self, store: &ParameterStore, b: &Behavior) -> Result<Vec<f64>> {
        let mut tape = Tape::new(store);
        let v = self.embed(&mut tape, &[b.item], &[b.category])?;
        Ok(tape.value(v).row(0).to_vec())
    }

    pub fn item_row<'a>(&self, store: &'a ParameterStore, item: u32) -> &'a [f64] {
        store.value(self.item).row(item as usize)
    }

    pub fn category_row<'a>(&self, store: &'a ParameterStore, category: u32) -> &'a [f64] {
        store.value(self.category).row(category as usize)
    }

    /// Behavior vectors for a batch of (item, category) pairs without a tape.
    pub fn lookup_rows(&self, store: &ParameterStore, items: &[u32], categories: &[u32]) -> Tensor2D {
        let mut out = Tensor2D::zeros(items.len(), self.dim());
        for (r, (&i, &c)) in items.iter().zip(categories).enumerate() {
            let row = out.row_mut(r);
            row[..self.item_dim].copy_from_slice(self.item_row(store, i));
            row[self.item_dim..].copy_from_slice(self.category_row(store, c));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tables() -> (ParameterStore, EmbeddingTables) {
        let mut store = ParameterStore::new();
        let t = EmbeddingTables::new(&mut store, 10, 5, 4, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        (store, t)
    }

    #[test]
    fn padding_behavior_is_zero() {
        let (store, t) = tables();
        assert_eq!(t.embed_behavior(&store, &Behavior::PADDING).unwrap(), vec![0.0; 8]);
    }

    #[test]
    fn behavior_vector_concatenates_fields() {
        let (store, t) = tables();
        let v = t.embed_behavior(&store, &Behavior::new(9, 4, 0)).unwrap();
        assert_eq!(&v[..4], store.value(t.item).row(9));
        assert_eq!(&v[4..], store.value(t.category).row(4));
        let w = t.embed_behavior(&store, &Behavior::new(9, 2, 0)).unwrap();
        assert_eq!(v[..4], w[..4]);
        assert!(v[4..].iter().zip(&w[4..]).all(|(a, b)| a != b));
    }

    #[test]
    fn out_of_range_names_the_field() {
        let (store, t) = tables();
        let err = t.embed_behavior(&store, &Behavior::new(3, 5, 0)).unwrap_err();
        assert!(err.to_string().contains("embedding.category"), "{err}");
    }

    #[test]
    fn init_bound() {
        let (store, t) = tables();
        let b = 1.0 / 2.0;
        assert!(store.value(t.item).data().iter().all(|v| v.abs() <= b));
    }
}
