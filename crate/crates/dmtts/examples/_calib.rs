use dmtts::corpus::generate::Corpus;
use dmtts::eval::{evaluate, teacher_forced_accuracy, EvalConfig, EvalMode};
use dmtts::model::ckpt::load_checkpoint;

fn main() -> dmtts::Result<()> {
    let corpus = Corpus::load(std::path::Path::new("/tmp/calib/corpus"))?;
    let split = corpus.split();
    for path in std::env::args().skip(1) {
        let (params, header) = load_checkpoint(std::path::Path::new(&path))?;
        let t0 = std::time::Instant::now();
        let acc = teacher_forced_accuracy(
            &params, &header.config, &corpus, &split.heldout_fine, 100, 100,
        )?;
        let t_acc = t0.elapsed().as_secs_f64();
        let ecfg = EvalConfig { clips_per_dialect: 25, ..EvalConfig::new(EvalMode::ZeroShot) };
        let t0 = std::time::Instant::now();
        let m = evaluate(&params, &header.config, &corpus, &split.heldout_fine, &ecfg)?;
        println!(
            "{path}: tf_acc {acc:.4} ({t_acc:.1}s)  wer {:.4}  sim {:.4}  n {} ({:.1}s)",
            m.wer, m.sim, m.n, t0.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
