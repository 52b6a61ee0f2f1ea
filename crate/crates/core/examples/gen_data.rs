//! Generates the synthetic feature dataset, writes it to disk and reads it back.
//!
//! ```text
//! cargo run --release --example gen_data -- [out_dir] [key=value ...]
//! ```

use std::path::PathBuf;

use vidloc::config::parse_config;
use vidloc::data::{generate_synthetic_with_bank, load_feature_dir, write_feature_dir};

fn main() -> vidloc::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args
        .iter()
        .find(|a| !a.contains('='))
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("vidloc_features"));
    let mut pairs = vec![("preset".to_string(), "tiny".to_string())];
    pairs.extend(args.iter().filter_map(|a| a.split_once('=')).map(|(k, v)| (k.into(), v.into())));
    let cfg = parse_config(None, &[], &pairs)?;

    let (split, _bank) = generate_synthetic_with_bank(&cfg.synthetic)?;
    write_feature_dir(&out, &split)?;
    let back = load_feature_dir(&out)?;
    println!("wrote {} train and {} test videos to {}", back.train.len(), back.test.len(), out.display());
    println!("{} frames x {} dims, {} classes", back.frames(), back.dim(), back.num_classes);

    let v = &split.test[0];
    if let Some(units) = &v.units {
        for (i, u) in units.iter().enumerate() {
            println!("test[0] unit {i}: frames {}..{} salient {:?}", u.start, u.end, u.salient_frames);
        }
    }
    println!("test[0] label {}", v.label);
    Ok(())
}
