//! Builds the request-independent (ordering, position, level) -> cache-slot
//! index, persists it in the versioned binary format, reloads it, and
//! verifies the round trip.
//!
//! Usage: cargo run --release --example index_matrix_io

use treerank::ccm::{IndexMatrix, PermutationTable};
use treerank::tcem::TreeLayout;

fn main() -> treerank::error::Result<()> {
    let (n, m) = (8, 8);
    let layout = TreeLayout::new(m)?;
    let table = PermutationTable::build(n, m, 1_000_000)?;
    let index = IndexMatrix::build(&table, &layout)?;
    println!(
        "built index for {} orderings x {} positions x {} levels",
        table.count(),
        m,
        layout.level_count()
    );

    let path = std::env::temp_dir().join("treerank_index_matrix.bin");
    index.save(&path)?;
    let bytes = std::fs::metadata(&path)?.len();
    println!("saved {} ({bytes} bytes)", path.display());

    let reloaded = IndexMatrix::load(&path)?;
    let mut checked = 0usize;
    for p in (0..table.count() as usize).step_by(4057) {
        assert_eq!(index.row(p), reloaded.row(p), "row {p}");
        checked += 1;
    }
    println!("reloaded copy matches on {checked} spot-checked rows");

    // A few slot rows for the lexicographically first ordering: every
    // position reads its level summaries from these cache slots.
    let first = table.row(0);
    println!("first ordering {first:?} -> slots per (position, level):");
    let row = reloaded.row(0);
    let levels = layout.level_count();
    for t in 0..m {
        println!("  position {t}: {:?}", &row[t * levels..(t + 1) * levels]);
    }
    std::fs::remove_file(&path)?;
    Ok(())
}
