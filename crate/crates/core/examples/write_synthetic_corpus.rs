//! Regenerates `data/synthetic_corpus.csv`.

use persona_probe::lexicon::{corpus_csv, synthetic_corpus, SHIPPED_CORPUS_DOCS, SHIPPED_CORPUS_SEED};

fn main() -> std::io::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic_corpus.csv");
    let docs = synthetic_corpus(SHIPPED_CORPUS_DOCS, SHIPPED_CORPUS_SEED);
    std::fs::write(path, corpus_csv(&docs))?;
    println!("wrote {} documents to {path}", docs.len());
    Ok(())
}
