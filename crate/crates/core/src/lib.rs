pub mod decoupling;
pub mod denoiser;
pub mod evaluation;
pub mod imaging;
pub mod sampling;
pub mod schedule;
pub mod tensor;
pub mod training;

use sha2::{Digest, Sha256};

/// Short stable hash (16 hex digits of SHA-256) of a canonical text form.
pub fn fingerprint(text: &str) -> String {
    sha256_hex(text.as_bytes())[..16].to_string()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub mod rng {
    //! Seeded, reproducible random streams.
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub type Rng = ChaCha8Rng;

    /// Independent generator `index` under `seed`.
    pub fn stream(seed: u64, index: u64) -> Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        rng
    }
}

pub mod parallel {
    //! Order-preserving data parallelism over scoped threads.

    /// Worker count: `AMID_THREADS` if set and positive, else the machine's
    /// available parallelism.
    pub fn worker_threads() -> usize {
        std::env::var("AMID_THREADS")
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    /// `items.iter().map(f).collect()`, split into contiguous chunks across
    /// workers. Output order matches input order regardless of thread count.
    pub fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync) -> Vec<U> {
        let threads = worker_threads().min(items.len()).max(1);
        if threads == 1 {
            return items.iter().map(f).collect();
        }
        let chunk = items.len().div_ceil(threads);
        let f = &f;
        std::thread::scope(|s| {
            let handles: Vec<_> = items
                .chunks(chunk)
                .map(|c| s.spawn(move || c.iter().map(f).collect::<Vec<U>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("worker panicked"))
                .collect()
        })
    }
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/diffusion.md")]
    mod diffusion {}
    #[doc = include_str!("../../../book/src/measurements.md")]
    mod measurements {}
    #[doc = include_str!("../../../book/src/ambient_loss.md")]
    mod ambient_loss {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    mod sampling {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
