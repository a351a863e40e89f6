//! Exercises the paged KV-cache pool directly: all-or-nothing admission,
//! page-granular growth, rejection under pressure, and reclamation when a
//! session drops.

use dmtts::corpus::vocab::build_vocab;
use dmtts::model::config::ModelConfig;
use dmtts::model::params::init_params;
use dmtts::serve::{pages_for, Engine, PoolConfig, Precision, SessionStatus};

fn main() -> dmtts::Result<()> {
    let cfg = ModelConfig {
        n_layers: 1,
        d_model: 16,
        n_heads: 2,
        n_kv_heads: 2,
        d_ff: 16,
        experts_shared: 1,
        experts_per_dialect: 1,
        top_k: 1,
        m_dialect_tokens: 1,
        max_seq_len: 64,
        vocab: build_vocab(8, 8, 2, 2, 1)?,
        // This init's greedy streams run long, so session C hits the pool
        // wall instead of stopping at EOS.
        seed: 1,
    };
    let params = init_params(&cfg)?;

    // Two KV planes (1 layer x 2 kv heads), page size 2: a 7-token prefix
    // needs ceil(7/2) = 4 pages per plane.
    let pool_cfg = PoolConfig { page_size: 2, n_pages: 12 };
    let engine = Engine::new(&params, &cfg, &pool_cfg, Precision::Float)?;
    let text = [0u32, 1, 2, 3, 4];
    println!(
        "pool: {} pages of {} slots; prefix of 7 tokens needs {} pages x 2 planes",
        pool_cfg.n_pages,
        pool_cfg.page_size,
        pages_for(7, pool_cfg.page_size)
    );

    let a = engine.new_session(&text, None, 0)?;
    println!("session A admitted: {} pages in use", engine.pool().in_use());

    // 12 - 8 = 4 free pages cannot cover another 8-page admission.
    match engine.new_session(&text, None, 1) {
        Err(e) => println!("session B rejected: {e}"),
        Ok(_) => unreachable!("pool cannot admit a second 8-page session"),
    }

    // A shorter prompt (4-token prefix = 2 pages x 2 planes) fits exactly.
    let mut c = engine.new_session(&[0, 1], None, 1)?;
    println!("session C admitted: {} pages in use", engine.pool().in_use());

    // C grows page by page until the pool runs dry, then freezes.
    let out = c.run_greedy(16)?;
    println!(
        "session C decoded {} tokens before status {:?} ({} pages in use)",
        out.len(),
        c.status(),
        engine.pool().in_use()
    );
    assert_eq!(c.status(), SessionStatus::Overflow);

    drop(a);
    println!("dropped A: {} pages in use", engine.pool().in_use());
    drop(c);
    println!("dropped C: {} pages in use", engine.pool().in_use());
    assert_eq!(engine.pool().in_use(), 0, "all pages reclaimed");
    Ok(())
}
