//! Compares autodiff gradients of the full model loss against central finite
//! differences, one row per parameter tensor.
//!
//!     cargo run --release --example gradient_check -- [off|agg|agg+graph]

use srw::encoder::{Dropout, EncoderConfig};
use srw::model::{ContextMode, Example, Model, ModelConfig};
use srw::numerics::check_gradients;
use srw::sessions::{generate_corpus, CatalogSpec, Session};
use srw::text::Vocabulary;

fn main() -> srw::Result<()> {
    let context: ContextMode = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(ContextMode::AggregationGraph);
    let (_, generated) = generate_corpus(5, 2, CatalogSpec::default());
    let sessions: Vec<Session> = generated.into_iter().map(|g| g.session).collect();
    let vocab = Vocabulary::build(sessions.iter().flat_map(Session::queries), 1)?;
    let examples = sessions.iter().map(|s| Example::from_session(s, &vocab)).collect::<srw::Result<Vec<_>>>()?;

    let mut enc = EncoderConfig::new(8, 2, 16, 2);
    enc.dropout = 0.0;
    let mut cfg = ModelConfig::new(vocab.len(), enc, context);
    cfg.gat_head_dim = 4;
    let model: Model<f64> = Model::new(cfg, 1)?;
    let r = check_gradients(model.params(), 1e-5, |tape| {
        let mut parts = Vec::new();
        let mut tokens = 0;
        for e in &examples {
            let (l, n) = model.example_loss(tape, e, &mut Dropout::off())?;
            parts.push(l);
            tokens += n;
        }
        let mut total = parts[0];
        for &p in &parts[1..] {
            total = tape.add(total, p)?;
        }
        Ok(tape.scale(total, 1.0 / tokens as f64))
    })?;
    println!("{:<32} {:>10} {:>10} {:>10}", "parameter", "‖grad‖", "rel err", "max abs");
    for p in &r.params {
        println!("{:<32} {:>10.2e} {:>10.2e} {:>10.2e}", p.name, p.grad_norm, p.rel_error, p.max_abs_error);
    }
    println!("{} loss evaluations, worst relative error {:.2e}", r.evaluations, r.max_rel_error());
    Ok(())
}
