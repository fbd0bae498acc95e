//! A β sweep through the same code path as `fsg-lab ablate`, written to a
//! temporary output root.

use std::collections::BTreeMap;

use fsg_lab::cli::{train_into, Sweep};
use fsg_lab::config::{DatasetKind, RunConfig};

fn main() -> fsg_lab::Result<()> {
    let mut base = RunConfig::default();
    base.train.epochs = 5;
    base.train.lr = 1e-2;
    base.dataset.kind = DatasetKind::Blobs;
    base.dataset.n_per_class = 100;
    let root = std::env::temp_dir().join(format!("fsg-ablate-{}", std::process::id()));
    let sweep = Sweep::parse("beta=0.1,0.5,0.9")?;
    for i in 0..sweep.len() {
        let (cfg, label) = sweep.entry(&base, i);
        let dir = root.join(format!("beta={label}"));
        let s = train_into(&cfg, &root, &dir, "ablate", BTreeMap::from([("beta".into(), label.clone())]))?;
        println!("beta={label}: train loss {:.4}, accuracy {:.3}", s.train_loss, s.train_accuracy);
    }
    std::fs::remove_dir_all(&root)?;
    Ok(())
}
