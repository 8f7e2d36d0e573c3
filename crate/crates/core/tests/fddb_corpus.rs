//! Totals over the real FDDB release. Runs only when `FDDB_ROOT` points at a
//! directory holding `FDDB-folds/FDDB-fold-NN{,-ellipseList}.txt`.

use std::path::PathBuf;

use qdet::dataio::parse_fddb;

#[test]
fn full_corpus_totals() {
    let Some(root) = std::env::var_os("FDDB_ROOT").map(PathBuf::from) else {
        eprintln!("FDDB_ROOT not set, skipping");
        return;
    };
    let folds = root.join("FDDB-folds");
    let (mut images, mut faces) = (0, 0);
    for k in 1..=10 {
        let read = |suffix: &str| {
            let p = folds.join(format!("FDDB-fold-{k:02}{suffix}.txt"));
            std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
        };
        let records = parse_fddb(&read(""), &read("-ellipseList")).unwrap();
        images += records.len();
        faces += records.iter().map(|r| r.faces.len()).sum::<usize>();
    }
    assert_eq!((images, faces), (2845, 5171));
}
