//! `facadewin` command line.
//!
//! A dataset directory holds `images/<id>.png`, `annotations.json` (COCO
//! style, RLE masks) and, after `prep`, `crops.json` and `split.json`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::annotation::{CocoDataset, CocoImage, WindowAnnotation};
use crate::citygml;
use crate::dataset::{self, DatasetSplit, PrepOptions};
use crate::error::{Error, Result};
use crate::eval::{self, ApInterpolation, Detection, EvalMode, EvalOptions, EvalReport};
use crate::planner::{self, DatasetStats};
use crate::synth::{self, DetectorNoiseSpec, FacadeSceneSpec};
use crate::texture::TextureImage;
use crate::tuner::{self, Objective};

const ANNOTATIONS: &str = "annotations.json";
const CROPS: &str = "crops.json";
const SPLIT: &str = "split.json";
const IMAGES: &str = "images";

#[derive(Debug, Parser)]
#[command(
    name = "facadewin",
    version,
    about = "Facade window detection: data prep, planning and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract facade texture references from a CityGML file.
    Ingest {
        gml: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Directory the texture URIs are relative to; when given, image
        /// dimensions are filled in and unresolved textures reported.
        #[arg(long)]
        textures: Option<PathBuf>,
    },
    /// Crop, equalize, augment and split labelled textures.
    Prep {
        /// Directory the label file's `file_name` entries are relative to.
        images: PathBuf,
        /// COCO-style label file for the full textures.
        labels: PathBuf,
        /// Crop side in pixels.
        #[arg(long, default_value_t = 128, value_parser = parse_side)]
        side: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Minimum fraction of a window that must stay inside a crop.
        #[arg(long, default_value_t = dataset::DEFAULT_MIN_VISIBLE)]
        min_visible: f64,
        /// Shuffle augmented crops individually instead of keeping every
        /// crop of a texture in the same split.
        #[arg(long)]
        shuffle_crops: bool,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Derive network depth, anchors and RoI budget from a dataset.
    Plan {
        dataset: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Render synthetic facades with exact window labels.
    Synth {
        /// One scene spec or an array of them.
        #[arg(long)]
        spec: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Produce detections from a dataset's ground truth with a noisy detector.
    Simulate {
        dataset: PathBuf,
        #[arg(long)]
        noise: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Score detections against a dataset.
    Eval {
        detections: PathBuf,
        dataset: PathBuf,
        #[command(flatten)]
        common: EvalArgs,
        /// Operating score threshold.
        #[arg(long, default_value_t = planner::DEFAULT_P_MIN)]
        pmin: f64,
        /// 101-point sampled AP instead of the all-point envelope.
        #[arg(long)]
        coco101: bool,
        /// Also print the report as a CSV row.
        #[arg(long)]
        csv: bool,
        /// Write one PNG per image with ground truth (green) and kept
        /// detections (red) outlined.
        #[arg(long)]
        overlays: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Sweep the score threshold and write the precision/recall curve.
    Sweep {
        detections: PathBuf,
        dataset: PathBuf,
        #[command(flatten)]
        common: EvalArgs,
        #[arg(long, default_value_t = Objective::default())]
        objective: Objective,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Print optimised-minus-standard deltas of two reports.
    Compare {
        standard: PathBuf,
        optimised: PathBuf,
        #[arg(long)]
        csv: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Report double detections and the center bias of missed windows.
    Diagnose {
        detections: PathBuf,
        dataset: PathBuf,
        /// Only consider images of this split.
        #[arg(long)]
        split: Option<SplitName>,
        #[arg(long, default_value_t = eval::AP_IOU_THRESHOLD)]
        iou: f64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, default_value_t = EvalMode::Box)]
    mode: EvalMode,
    /// Only score images of this split.
    #[arg(long)]
    split: Option<SplitName>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

fn parse_side(s: &str) -> std::result::Result<u32, String> {
    match s.parse::<u32>() {
        Ok(v @ (128 | 256)) => Ok(v),
        _ => Err(format!("crop side must be 128 or 256, got '{s}'")),
    }
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn main() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

struct LoadedDataset {
    root: PathBuf,
    coco: CocoDataset,
    windows: Vec<WindowAnnotation>,
}

impl LoadedDataset {
    fn open(root: &Path) -> Result<Self> {
        let coco = CocoDataset::read(&root.join(ANNOTATIONS))?;
        let windows = coco.windows()?;
        Ok(LoadedDataset {
            root: root.to_path_buf(),
            coco,
            windows,
        })
    }

    fn split_ids(&self, which: Option<SplitName>) -> Result<Option<BTreeSet<String>>> {
        let Some(which) = which else { return Ok(None) };
        let split: DatasetSplit = read_json(&self.root.join(SPLIT))?;
        let ids = match which {
            SplitName::Train => split.train,
            SplitName::Val => split.val,
            SplitName::Test => split.test,
        };
        Ok(Some(ids.into_iter().collect()))
    }

    /// Ground truth and detections restricted to the chosen split.
    fn select(
        &self,
        dets: Vec<Detection>,
        which: Option<SplitName>,
    ) -> Result<(Vec<Detection>, Vec<WindowAnnotation>)> {
        match self.split_ids(which)? {
            None => Ok((dets, self.windows.clone())),
            Some(ids) => Ok((
                dets.into_iter().filter(|d| ids.contains(&d.image_id)).collect(),
                self.windows
                    .iter()
                    .filter(|w| ids.contains(&w.image_id))
                    .cloned()
                    .collect(),
            )),
        }
    }

    fn square_side(&self) -> Result<u32> {
        let first = self
            .coco
            .images
            .first()
            .ok_or_else(|| Error::invalid("dataset has no images"))?;
        for img in &self.coco.images {
            if img.width != img.height {
                return Err(Error::NotSquare {
                    width: img.width,
                    height: img.height,
                });
            }
            if img.width != first.width {
                return Err(Error::DimensionMismatch {
                    expected: (first.width, first.width),
                    found: (img.width, img.height),
                });
            }
        }
        Ok(first.width)
    }
}

fn save_dataset(root: &Path, images: &[TextureImage], windows: &[WindowAnnotation]) -> Result<()> {
    let dir = root.join(IMAGES);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut coco_images = Vec::with_capacity(images.len());
    for img in images {
        let file_name = format!("{IMAGES}/{}.png", img.id);
        img.save_png(&root.join(&file_name))?;
        coco_images.push(CocoImage {
            id: img.id.clone(),
            file_name,
            width: img.width,
            height: img.height,
        });
    }
    CocoDataset::from_windows(coco_images, windows).write(&root.join(ANNOTATIONS))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest { gml, output, textures } => ingest(&gml, &output, textures.as_deref()),
        Command::Prep {
            images,
            labels,
            side,
            seed,
            min_visible,
            shuffle_crops,
            output,
        } => {
            let opts = PrepOptions {
                side,
                seed,
                min_visible,
                shuffle_crops,
            };
            prep(&images, &labels, &opts, &output)
        }
        Command::Plan { dataset, output } => plan(&dataset, &output),
        Command::Synth { spec, output } => synth_cmd(&spec, &output),
        Command::Simulate { dataset, noise, output } => {
            let data = LoadedDataset::open(&dataset)?;
            let noise: DetectorNoiseSpec = read_json(&noise)?;
            let dets = synth::simulate_detector(&data.windows, &noise)?;
            eval::write_detections(&output, &dets)?;
            println!("{} detections from {} windows", dets.len(), data.windows.len());
            Ok(())
        }
        Command::Eval {
            detections,
            dataset,
            common,
            pmin,
            coco101,
            csv,
            overlays,
            output,
        } => {
            let data = LoadedDataset::open(&dataset)?;
            let (dets, gts) = data.select(eval::read_detections(&detections)?, common.split)?;
            let opts = EvalOptions {
                p_min: pmin,
                mode: common.mode,
                interpolation: if coco101 {
                    ApInterpolation::Coco101
                } else {
                    ApInterpolation::AllPoint
                },
                ..EvalOptions::default()
            };
            let report = eval::evaluate(&dets, &gts, &opts)?;
            write_json(&output, &report)?;
            if let Some(dir) = overlays {
                write_overlays(&data, &dets, &gts, pmin, &dir)?;
            }
            println!(
                "recall {:.4}  precision {:.4}  ap50 {:.4}  (tp {} fp {} fn {})",
                report.recall, report.precision, report.ap50, report.tp, report.fp, report.fn_
            );
            if csv {
                println!("{}", EvalReport::CSV_HEADER);
                println!("{}", report.csv_row(&detections.display().to_string()));
            }
            Ok(())
        }
        Command::Sweep {
            detections,
            dataset,
            common,
            objective,
            output,
        } => {
            let data = LoadedDataset::open(&dataset)?;
            let (dets, gts) = data.select(eval::read_detections(&detections)?, common.split)?;
            let sweep = tuner::sweep_threshold(&dets, &gts, &tuner::default_grid(), objective, common.mode)?;
            write_text(&output, &sweep.to_csv())?;
            println!("best p_min {} by {}", sweep.best_p_min, sweep.objective);
            Ok(())
        }
        Command::Compare {
            standard,
            optimised,
            csv,
            output,
        } => {
            let a: EvalReport = read_json(&standard)?;
            let b: EvalReport = read_json(&optimised)?;
            let delta = eval::compare_runs(&a, &b)?;
            if csv {
                println!("recall,precision,ap50");
                println!("{:.2},{:.2},{:.2}", delta.recall, delta.precision, delta.ap50);
            } else {
                println!("recall    {:+.2}", delta.recall);
                println!("precision {:+.2}", delta.precision);
                println!("ap50      {:+.2}", delta.ap50);
            }
            if let Some(out) = output {
                write_json(&out, &delta)?;
            }
            Ok(())
        }
        Command::Diagnose {
            detections,
            dataset,
            split,
            iou,
            output,
        } => {
            let data = LoadedDataset::open(&dataset)?;
            let side = data.square_side()?;
            let (dets, gts) = data.select(eval::read_detections(&detections)?, split)?;
            let doubles = tuner::find_double_detections(&dets, &gts, iou);
            let bias = tuner::missed_center_bias(&dets, &gts, side)?;
            println!("{} windows, {} detected more than once", gts.len(), doubles.len());
            for d in doubles.iter().take(10) {
                println!("  {} window #{}: {} detections", d.image_id, d.gt_index, d.count());
            }
            let fmt = |m: Option<f64>| m.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
            println!(
                "missed {}; mean center distance missed {} vs detected {}",
                bias.missed.len(),
                fmt(bias.missed_mean),
                fmt(bias.detected_mean)
            );
            if let Some(out) = output {
                #[derive(Serialize)]
                struct Diagnosis<'a> {
                    doubles: &'a [tuner::DoubleDetection],
                    center_bias: &'a tuner::CenterBias,
                }
                write_json(
                    &out,
                    &Diagnosis {
                        doubles: &doubles,
                        center_bias: &bias,
                    },
                )?;
            }
            Ok(())
        }
    }
}

fn ingest(gml: &Path, output: &Path, textures: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(gml).map_err(|e| Error::io(gml, e))?;
    let mut parsed = citygml::parse_citygml(&text)?;
    if let Some(root) = textures {
        let loaded = citygml::load_textures(&mut parsed.entries, root)?;
        for path in &loaded.unresolved {
            eprintln!("warning: texture not found: {path}");
        }
    }
    write_text(output, &(citygml::manifest_to_json(&parsed.entries)? + "\n"))?;
    println!(
        "{} textures ({} without imageURI, {} with bad coordinates skipped)",
        parsed.entries.len(),
        parsed.skipped_missing_uri,
        parsed.skipped_bad_coords
    );
    Ok(())
}

fn prep(images: &Path, labels: &Path, opts: &PrepOptions, output: &Path) -> Result<()> {
    let coco = CocoDataset::read(labels)?;
    let windows = coco.windows()?;
    let mut textures = Vec::with_capacity(coco.images.len());
    for img in &coco.images {
        let texture = TextureImage::load(&images.join(&img.file_name), img.id.clone())?;
        if (texture.width, texture.height) != (img.width, img.height) {
            return Err(Error::DimensionMismatch {
                expected: (img.width, img.height),
                found: (texture.width, texture.height),
            });
        }
        let anns = windows.iter().filter(|w| w.image_id == img.id).cloned().collect();
        textures.push((texture, anns));
    }
    let prepared = dataset::prepare_dataset(&textures, opts)?;
    save_dataset(output, &prepared.images, &prepared.windows)?;
    write_json(&output.join(CROPS), &prepared.crops)?;
    write_json(&output.join(SPLIT), &prepared.split)?;
    for id in &prepared.skipped {
        eprintln!("warning: texture {id} is smaller than {} px, skipped", opts.side);
    }
    let (tr, va, te) = prepared.split.sizes();
    println!(
        "{} crops, {} images, {} windows; split {tr}/{va}/{te}",
        prepared.crops.len(),
        prepared.images.len(),
        prepared.windows.len()
    );
    Ok(())
}

fn plan(dataset: &Path, output: &Path) -> Result<()> {
    let data = LoadedDataset::open(dataset)?;
    let side = data.square_side()?;
    let stats = DatasetStats::from_windows(side, data.coco.images.len(), &data.windows)?;
    let config = planner::build_config(&stats)?;
    write_json(output, &config)?;
    println!(
        "k_layer {} (stride {}), anchors {:?} x {:?}, {} rois/image",
        config.k_layer,
        config.stride(),
        config.anchor_scales,
        config.anchor_ratios,
        config.rois_per_image
    );
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SceneSpecs {
    One(FacadeSceneSpec),
    Many(Vec<FacadeSceneSpec>),
}

fn synth_cmd(spec: &Path, output: &Path) -> Result<()> {
    let specs = match read_json::<SceneSpecs>(spec)? {
        SceneSpecs::One(s) => vec![s],
        SceneSpecs::Many(v) => v,
    };
    let mut ids = BTreeSet::new();
    let mut images = Vec::with_capacity(specs.len());
    let mut windows = Vec::new();
    for s in &specs {
        if !ids.insert(s.image_id()) {
            return Err(Error::DuplicateId(s.image_id()));
        }
        let (img, anns) = synth::generate_facade(s)?;
        images.push(img);
        windows.extend(anns);
    }
    save_dataset(output, &images, &windows)?;
    println!("{} scenes, {} windows", images.len(), windows.len());
    Ok(())
}

fn outline(img: &mut TextureImage, b: &crate::geometry::BBox, rgb: [u8; 3]) {
    let (x1, y1) = ((b.right() - 1).min(img.width - 1), (b.bottom() - 1).min(img.height - 1));
    for x in b.x..=x1 {
        img.set_pixel(x, b.y, rgb);
        img.set_pixel(x, y1, rgb);
    }
    for y in b.y..=y1 {
        img.set_pixel(b.x, y, rgb);
        img.set_pixel(x1, y, rgb);
    }
}

fn write_overlays(
    data: &LoadedDataset,
    dets: &[Detection],
    gts: &[WindowAnnotation],
    p_min: f64,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ids: BTreeSet<&str> = gts.iter().map(|g| g.image_id.as_str()).collect();
    for meta in data.coco.images.iter().filter(|i| ids.contains(i.id.as_str())) {
        let mut img = TextureImage::load(&data.root.join(&meta.file_name), meta.id.clone())?;
        for g in gts.iter().filter(|g| g.image_id == meta.id) {
            outline(&mut img, &g.bbox, [0, 255, 0]);
        }
        for d in dets.iter().filter(|d| d.image_id == meta.id && d.score >= p_min) {
            if d.bbox.fits(img.width, img.height) {
                outline(&mut img, &d.bbox, [255, 0, 0]);
            }
        }
        img.save_png(&dir.join(format!("{}.png", meta.id)))?;
    }
    Ok(())
}
