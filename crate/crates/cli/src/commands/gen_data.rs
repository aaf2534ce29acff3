use patchfusion::dataio::{generate_dataset, png16_sidecar, DepthFormat, Split, MANIFEST_FILE};

use super::create_dir;
use crate::config::GenDataConfig;
use crate::error::Result;
use crate::manifest::{RunManifest, RunRecord, RUN_MANIFEST};

pub fn run(cfg: &GenDataConfig) -> Result<RunManifest> {
    create_dir(&cfg.out)?;
    let mut rec = RunRecord::start(&cfg.out);
    let manifest = generate_dataset(&cfg.out, &cfg.spec())?;
    for split in Split::ALL {
        for id in manifest.ids(split) {
            rec.output(&manifest.image_path(&cfg.out, split, id))?;
            let depth = manifest.depth_path(&cfg.out, split, id);
            if cfg.format == DepthFormat::Png16 {
                rec.output(&png16_sidecar(&depth))?;
            }
            rec.output(&depth)?;
        }
        log::info!("{split}: {} samples, {} scenes rejected", manifest.ids(split).len(), manifest.excluded[&split]);
    }
    rec.output(&cfg.out.join(MANIFEST_FILE))?;
    rec.dataset_hash = Some(manifest.hash()?);
    rec.finish("gen-data", cfg, RUN_MANIFEST)
}
