//! Seeded synthetic sessions over a templated brand × modifier × category catalog.
//!
//! Each session picks a product, walks through a few history queries that
//! circle the intent (the key attribute repeats, distractors appear once),
//! then emits a corrupted source query whose fix is only visible in the
//! history. The target is the product's canonical title.

use std::collections::BTreeSet;

use crate::numerics::SeedRng;
use crate::sessions::{Catalog, Product, ProductId, Session};

/// Retrieval page size used while validating generated sessions.
const PAGE: usize = 32;

const BRAND_PAIRS: [(&str, &str); 20] = [
    ("dodge", "dodger"),
    ("mopar", "mopur"),
    ("nike", "nikko"),
    ("sony", "sonos"),
    ("canon", "canton"),
    ("acer", "acme"),
    ("asus", "asics"),
    ("lego", "legos"),
    ("bose", "boss"),
    ("dell", "delly"),
    ("fila", "filo"),
    ("vans", "vance"),
    ("puma", "pumo"),
    ("levi", "levin"),
    ("kodak", "kodiak"),
    ("razer", "razor"),
    ("oster", "foster"),
    ("corsair", "corvair"),
    ("samsung", "samsong"),
    ("garmin", "gamin"),
];

const CATEGORIES: [&str; 10] = [
    "poster", "banner", "shoes", "phone", "case", "charger", "headphones", "jacket", "backpack", "watch",
];

const MODIFIERS: [&str; 10] = [
    "red", "black", "white", "blue", "green", "pink", "grey", "small", "large", "vintage",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CatalogSpec {
    /// Number of products sampled from the brand × modifier × category grid.
    pub n_products: usize,
}

impl Default for CatalogSpec {
    fn default() -> Self {
        CatalogSpec { n_products: 2000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Corruption {
    /// One token replaced by a misspelling.
    Typo,
    /// A disambiguating attribute (brand or modifier) left out.
    Drop,
    /// Brand swapped for its look-alike.
    Confusable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    Brand,
    Modifier,
    Category,
}

/// A session plus the generator's ground truth about how it was built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratedSession {
    pub session: Session,
    pub corruption: Corruption,
    /// The target token the source lost or damaged.
    pub key_token: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusStats {
    pub sessions: usize,
    pub products: usize,
    pub mean_history: f64,
    pub typo: usize,
    pub drop: usize,
    pub confusable: usize,
}

impl CorpusStats {
    pub fn of(generated: &[GeneratedSession], catalog: &Catalog) -> Self {
        let n = generated.len().max(1);
        let count = |c: Corruption| generated.iter().filter(|g| g.corruption == c).count();
        CorpusStats {
            sessions: generated.len(),
            products: catalog.len(),
            mean_history: generated.iter().map(|g| g.session.history.len()).sum::<usize>() as f64 / n as f64,
            typo: count(Corruption::Typo),
            drop: count(Corruption::Drop),
            confusable: count(Corruption::Confusable),
        }
    }
}

impl std::fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "sessions={} products={} mean_history={:.3} typo={} drop={} confusable={}",
            self.sessions, self.products, self.mean_history, self.typo, self.drop, self.confusable
        )
    }
}

fn brands() -> Vec<&'static str> {
    BRAND_PAIRS.iter().flat_map(|&(a, b)| [a, b]).collect()
}

fn twin(brand: &str) -> Option<&'static str> {
    BRAND_PAIRS.iter().find_map(|&(a, b)| {
        if a == brand {
            Some(b)
        } else if b == brand {
            Some(a)
        } else {
            None
        }
    })
}

fn lexicon() -> BTreeSet<&'static str> {
    brands().into_iter().chain(CATEGORIES).chain(MODIFIERS).collect()
}

/// Up to three fixed misspellings of a word, none colliding with the lexicon.
pub(crate) fn typo_variants(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let mut out = Vec::new();
    if chars.len() >= 3 {
        let mut c = chars.clone();
        c.swap(1, 2);
        out.push(c.into_iter().collect::<String>());
    }
    if chars.len() >= 4 {
        let mut c = chars.clone();
        c.remove(chars.len() / 2);
        out.push(c.into_iter().collect());
    }
    let mut c = chars.clone();
    c.push(*chars.last().unwrap_or(&'x'));
    out.push(c.into_iter().collect());
    let lex = lexicon();
    out.retain(|v| v != word && !lex.contains(v.as_str()));
    out.dedup();
    out
}

#[derive(Clone, Copy)]
struct Item {
    brand: &'static str,
    modifier: &'static str,
    category: &'static str,
}

impl Item {
    fn get(&self, slot: Slot) -> &'static str {
        match slot {
            Slot::Brand => self.brand,
            Slot::Modifier => self.modifier,
            Slot::Category => self.category,
        }
    }
}

/// Renders slot tokens in canonical order: brand, modifier, category.
fn render(brand: Option<&str>, modifier: Option<&str>, category: Option<&str>) -> String {
    [brand, modifier, category].into_iter().flatten().collect::<Vec<_>>().join(" ")
}

fn build_catalog(rng: &mut SeedRng, spec: CatalogSpec) -> (Catalog, Vec<Item>) {
    let brands = brands();
    let mut grid = Vec::with_capacity(brands.len() * MODIFIERS.len() * CATEGORIES.len());
    for &brand in &brands {
        for &modifier in &MODIFIERS {
            for &category in &CATEGORIES {
                grid.push(Item { brand, modifier, category });
            }
        }
    }
    // partial Fisher–Yates: first n entries become the catalog
    let n = spec.n_products.clamp(1, grid.len());
    for i in 0..n {
        let j = i + rng.below(grid.len() - i);
        grid.swap(i, j);
    }
    grid.truncate(n);
    // ids are a second permutation so tie-breaking by id carries no structure
    let mut ids: Vec<u32> = (1..=n as u32).collect();
    for i in (1..n).rev() {
        let j = rng.below(i + 1);
        ids.swap(i, j);
    }
    let products: Vec<Product> = grid
        .iter()
        .zip(&ids)
        .map(|(it, &id)| Product {
            id: ProductId(id),
            title: render(Some(it.brand), Some(it.modifier), Some(it.category)),
            attrs: vec![it.brand.into(), it.category.into(), it.modifier.into()],
        })
        .collect();
    let mut by_id: Vec<(u32, Item)> = ids.into_iter().zip(grid).collect();
    by_id.sort_by_key(|(id, _)| *id);
    let catalog = Catalog::new(products).expect("generated catalog is valid");
    (catalog, by_id.into_iter().map(|(_, it)| it).collect())
}

fn history_length(rng: &mut SeedRng) -> usize {
    // 3,4,5,6 with weights 4:3:2:1, mean 4
    match rng.below(10) {
        0..=3 => 3,
        4..=6 => 4,
        7..=8 => 5,
        _ => 6,
    }
}

fn alternatives(slot: Slot, exclude: &[&str]) -> Vec<&'static str> {
    let pool: Vec<&'static str> = match slot {
        Slot::Brand => brands(),
        Slot::Modifier => MODIFIERS.to_vec(),
        Slot::Category => CATEGORIES.to_vec(),
    };
    pool.into_iter().filter(|t| !exclude.contains(t)).collect()
}

/// History queries: the key token appears in at least two of them (always
/// at least one), each distractor for the key's slot appears exactly once,
/// and no history query reproduces the full target.
fn history(rng: &mut SeedRng, item: Item, key_slot: Slot) -> Vec<String> {
    let n = history_length(rng);
    let n_key = 2 + rng.below(n - 2);
    let mut positions: Vec<usize> = (1..n).collect();
    for i in (1..positions.len()).rev() {
        let j = rng.below(i + 1);
        positions.swap(i, j);
    }
    let key_at: BTreeSet<usize> = positions.into_iter().take(n_key.min(n - 1)).collect();

    let key = item.get(key_slot);
    let mut exclude = vec![key];
    if key_slot == Slot::Brand {
        if let Some(t) = twin(key) {
            exclude.push(t);
        }
    }
    let mut distractors = alternatives(key_slot, &exclude);

    let other_slots: Vec<Slot> = [Slot::Brand, Slot::Modifier, Slot::Category]
        .into_iter()
        .filter(|&s| s != key_slot)
        .collect();

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut toks: [Option<&str>; 3] = [None, None, None];
        let idx = |s: Slot| match s {
            Slot::Brand => 0,
            Slot::Modifier => 1,
            Slot::Category => 2,
        };
        if key_at.contains(&i) {
            toks[idx(key_slot)] = Some(key);
            // one companion intent token, never both
            let s = other_slots[rng.below(other_slots.len())];
            toks[idx(s)] = Some(item.get(s));
        } else if i == 0 && rng.below(3) == 0 {
            toks[idx(Slot::Category)] = Some(item.category);
        } else {
            let d_i = rng.below(distractors.len());
            let d = distractors.swap_remove(d_i);
            toks[idx(key_slot)] = Some(d);
            let s = other_slots[rng.below(other_slots.len())];
            toks[idx(s)] = Some(item.get(s));
        }
        if toks.iter().all(Option::is_none) {
            toks[idx(Slot::Category)] = Some(item.category);
        }
        out.push(render(toks[0], toks[1], toks[2]));
    }
    out
}

fn corrupt(rng: &mut SeedRng, item: Item) -> Option<(Corruption, Slot, String)> {
    let roll = rng.below(4);
    match roll {
        0 | 1 => {
            let slot = if rng.below(5) < 3 { Slot::Brand } else { Slot::Modifier };
            let src = match slot {
                Slot::Brand => render(None, Some(item.modifier), Some(item.category)),
                _ => render(Some(item.brand), None, Some(item.category)),
            };
            Some((Corruption::Drop, slot, src))
        }
        2 => {
            let slot = [Slot::Brand, Slot::Modifier, Slot::Category][rng.below(3)];
            let variants = typo_variants(item.get(slot));
            let bad = variants[rng.below(variants.len())].clone();
            let src = match slot {
                Slot::Brand => render(Some(&bad), Some(item.modifier), Some(item.category)),
                Slot::Modifier => render(Some(item.brand), Some(&bad), Some(item.category)),
                Slot::Category => render(Some(item.brand), Some(item.modifier), Some(&bad)),
            };
            Some((Corruption::Typo, slot, src))
        }
        _ => {
            let t = twin(item.brand)?;
            Some((
                Corruption::Confusable,
                Slot::Brand,
                render(Some(t), Some(item.modifier), Some(item.category)),
            ))
        }
    }
}

/// Deterministic corpus for `seed`: a catalog and `n_sessions` sessions whose
/// target ranks the purchased product first while the source ranks it worse.
pub fn generate_corpus(seed: u64, n_sessions: usize, spec: CatalogSpec) -> (Catalog, Vec<GeneratedSession>) {
    let root = SeedRng::new(seed);
    let (catalog, items) = build_catalog(&mut root.split("catalog"), spec);
    let mut rng = root.split("sessions");
    let mut out = Vec::with_capacity(n_sessions);
    while out.len() < n_sessions {
        let pi = rng.below(items.len());
        let item = items[pi];
        let pid = ProductId(pi as u32 + 1);
        let Some((corruption, slot, source)) = corrupt(&mut rng, item) else {
            continue;
        };
        let target = render(Some(item.brand), Some(item.modifier), Some(item.category));
        if catalog.rank_of(&target, pid, PAGE) != Some(1) {
            continue;
        }
        let src_rank = catalog.rank_of(&source, pid, PAGE);
        if matches!(src_rank, Some(r) if r <= 1) {
            continue;
        }
        let history = history(&mut rng, item, slot);
        let session = Session {
            session_id: format!("{seed:x}-{:06}", out.len()),
            history,
            source,
            target,
            purchased_product: pid,
        };
        out.push(GeneratedSession {
            session,
            corruption,
            key_token: item.get(slot).to_string(),
        });
    }
    (catalog, out)
}
