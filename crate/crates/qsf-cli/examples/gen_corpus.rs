fn main() {
    let bytes = qsf_core::data::synthetic::generate_corpus(5_000_000, 7);
    std::fs::write("/tmp/qsf/corpus.txt", &bytes).unwrap();
    println!("{} bytes", bytes.len());
}
