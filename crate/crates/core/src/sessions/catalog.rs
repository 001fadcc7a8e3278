use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokenize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProductId(pub u32);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Product {
    pub id: ProductId,
    pub title: String,
    pub attrs: Vec<String>,
}

impl Product {
    /// Distinct normalised tokens of the title and attributes.
    pub fn tokens(&self) -> BTreeSet<String> {
        let mut set: BTreeSet<String> = tokenize(&self.title).tokens.into_iter().collect();
        for a in &self.attrs {
            set.extend(tokenize(a).tokens);
        }
        set
    }
}

/// Products by id plus a token → products inverted index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Catalog {
    products: BTreeMap<ProductId, Product>,
    index: HashMap<String, Vec<ProductId>>,
}

impl Catalog {
    pub fn new(products: impl IntoIterator<Item = Product>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for p in products {
            if tokenize(&p.title).is_empty() {
                return Err(Error::Contract(format!("product {} has an empty title", p.id.0)));
            }
            if map.insert(p.id, p).is_some() {
                return Err(Error::Contract("duplicate product id".into()));
            }
        }
        let mut index: HashMap<String, Vec<ProductId>> = HashMap::new();
        for (id, p) in &map {
            for t in p.tokens() {
                index.entry(t).or_default().push(*id);
            }
        }
        Ok(Catalog { products: map, index })
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    pub fn get(&self, id: ProductId) -> Option<&Product> {
        self.products.get(&id)
    }

    pub fn products(&self) -> impl Iterator<Item = &Product> {
        self.products.values()
    }

    /// Product ids carrying `token`, ascending.
    pub fn postings(&self, token: &str) -> &[ProductId] {
        self.index.get(token).map_or(&[], Vec::as_slice)
    }

    /// Ranks products by the fraction of distinct query tokens they contain,
    /// ties by ascending id; products with no overlap are never returned.
    pub fn search(&self, query: &str, limit: usize) -> Vec<ProductId> {
        let q: BTreeSet<String> = tokenize(query).tokens.into_iter().collect();
        if q.is_empty() {
            return Vec::new();
        }
        let mut hits: HashMap<ProductId, usize> = HashMap::new();
        for t in &q {
            for &id in self.postings(t) {
                *hits.entry(id).or_default() += 1;
            }
        }
        // score = hits / |q|; |q| is shared so comparing hit counts is exact
        let mut ranked: Vec<(usize, ProductId)> = hits.into_iter().map(|(id, h)| (h, id)).collect();
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        ranked.into_iter().take(limit).map(|(_, id)| id).collect()
    }

    /// 1-based rank of `product` for `query` within the first `limit` results.
    pub fn rank_of(&self, query: &str, product: ProductId, limit: usize) -> Option<usize> {
        self.search(query, limit).iter().position(|&p| p == product).map(|i| i + 1)
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for p in self.products.values() {
            s.push_str(&serde_json::to_string(p).expect("product serialises"));
            s.push('\n');
        }
        s
    }

    pub fn parse_jsonl(text: &str) -> Result<Self> {
        let mut products = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let p: Product = serde_json::from_str(line).map_err(|e| Error::Schema {
                line: i + 1,
                msg: e.to_string(),
            })?;
            products.push(p);
        }
        Self::new(products)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_jsonl(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn product(id: u32, title: &str, attrs: &[&str]) -> Product {
        Product {
            id: ProductId(id),
            title: title.into(),
            attrs: attrs.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn small() -> Catalog {
        Catalog::new([
            product(3, "dodge red poster", &["dodge", "poster", "red"]),
            product(1, "mopar red poster", &["mopar", "poster", "red"]),
            product(2, "dodge blue banner", &["dodge", "banner", "blue"]),
        ])
        .unwrap()
    }

    #[test]
    fn index_matches_tokens() {
        let c = small();
        for p in c.products() {
            for t in p.tokens() {
                assert!(c.postings(&t).contains(&p.id));
            }
        }
        let total: usize = c.index.values().map(Vec::len).sum();
        let expected: usize = c.products().map(|p| p.tokens().len()).sum();
        assert_eq!(total, expected);
    }

    #[test]
    fn full_title_ranks_first() {
        assert_eq!(small().search("dodge red poster", 32)[0], ProductId(3));
    }

    #[test]
    fn no_overlap_is_empty() {
        assert!(small().search("laptop", 32).is_empty());
    }

    #[test]
    fn ties_break_by_lower_id() {
        let c = small();
        // "red poster" matches 1 and 3 fully
        assert_eq!(c.search("red poster", 32), vec![ProductId(1), ProductId(3)]);
        for _ in 0..3 {
            assert_eq!(c.search("poster", 32), vec![ProductId(1), ProductId(3)]);
        }
    }

    #[test]
    fn rejects_duplicates_and_empty_titles() {
        assert!(Catalog::new([product(1, "a", &[]), product(1, "b", &[])]).is_err());
        assert!(Catalog::new([product(1, "  ", &[])]).is_err());
    }
}
