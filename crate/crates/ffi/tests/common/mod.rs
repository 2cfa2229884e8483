use std::fmt::Write as _;
use std::path::Path;

/// 40 words in 4 dimensions: `w0..w19` lean towards the first axis, the
/// rest towards the third.
pub fn write_fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut vectors = String::new();
    for i in 0..40 {
        let t = i as f64 * 0.37;
        let v = if i < 20 {
            [3.0, t.sin(), 0.2 * t.cos(), 0.1]
        } else {
            [0.1, 0.2 * t.cos(), 3.0, t.sin()]
        };
        let _ = writeln!(vectors, "w{i} {} {} {} {}", v[0], v[1], v[2], v[3]);
    }
    let emb = dir.join("vectors.txt");
    std::fs::write(&emb, vectors).unwrap();

    let mut corpus = String::new();
    for d in 0..30 {
        let text = format!("w{} w{} w{}", d % 40, (d * 7) % 40, (d + 1) % 20);
        let _ = writeln!(corpus, "{}", serde_json::json!({"id": format!("d{d}"), "text": text}));
    }
    let docs = dir.join("corpus.jsonl");
    std::fs::write(&docs, corpus).unwrap();
    (emb, docs)
}
