//! Generate a procedural sprite corpus and read it back.
//!
//! ```bash
//! cargo run --release --example generate_corpus
//! ```

use fairylab::corpus::{generate_corpus, load_corpus, CorpusConfig};
use std::path::PathBuf;

fn main() -> fairylab::Result<()> {
    let out = PathBuf::from("target/examples/corpus");
    let config = CorpusConfig {
        n_styles: 3,
        clips_per_style: 4,
        frames: 8,
        height: 32,
        width: 32,
        seed: 7,
    };
    let index = generate_corpus(&out, &config, true)?;
    println!("wrote {} clips under {}", index.clips.len(), out.display());
    for entry in index.clips.iter().take(4) {
        println!(
            "  {}: style {}, motion {:?}, {} frames at {}x{}",
            entry.clip_id, entry.style_id, entry.motion_id, entry.frames, entry.height, entry.width
        );
    }

    let loaded = load_corpus(&out)?;
    let total_fg: usize = loaded
        .iter()
        .flat_map(|lc| lc.clip.frames.iter())
        .map(|f| f.foreground_count())
        .sum();
    let frames: usize = loaded.iter().map(|lc| lc.clip.frames.len()).sum();
    println!(
        "reloaded {} clips, {} frames, mean foreground coverage {:.1}%",
        loaded.len(),
        frames,
        100.0 * total_fg as f64 / (frames * 32 * 32) as f64
    );
    Ok(())
}
