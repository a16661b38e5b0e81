//! Scene datasets on disk: synthetic generation, export and ingestion.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! cameras.txt
//! images/view_000.ppm
//! sparse/view_000.pfm   sparse/view_000.pgm
//! gt/view_000.pfm       gt/view_000.pgm        (optional)
//! ```

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::formats::{read_cameras, read_masked_depth, read_ppm, write_cameras, write_masked_depth, write_ppm};
use crate::geometry::{Camera, Pose};
use crate::image::{DepthMap, Image};
use crate::rng::{indexed, rng_from, substream};
use crate::scene::{build_scene, render_view, simulate_sparse_depth, SceneSpec, SparseDepthSpec};

/// Images, cameras and depth supervision for every view.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub cameras: Vec<Camera>,
    pub sparse: Vec<DepthMap>,
    pub gt: Option<Vec<DepthMap>>,
}

pub fn view_name(i: usize) -> String {
    format!("view_{i:03}")
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }
}

/// Renders a synthetic scene and simulates its sparse depth.
///
/// Images are stored at 8 bits and depths at single precision, so the result
/// equals what [`ingest`] reads back after [`export`]. With a sparse scale
/// `s`, camera translations and ground truth are expressed in the same
/// `s`-scaled frame as the sparse depth.
pub fn synthesize(spec: &SceneSpec, sparse: &SparseDepthSpec, seed: u64) -> Result<Dataset> {
    sparse.validate()?;
    let (scene, cameras) = build_scene(spec)?;
    let rendered = cameras
        .par_iter()
        .map(|c| render_view(&scene, &c.pose, &c.intrinsics, spec.image.supersample))
        .collect::<Result<Vec<_>>>()?;
    let sparse_seed = substream(seed, "sparse");
    let s = sparse.scale;
    let mut out = Dataset {
        images: Vec::new(),
        cameras: Vec::new(),
        sparse: Vec::new(),
        gt: Some(Vec::new()),
    };
    for (i, ((image, depth), cam)) in rendered.into_iter().zip(&cameras).enumerate() {
        let image = image.quantized();
        let mut rng = rng_from(indexed(sparse_seed, i as u64));
        out.sparse.push(simulate_sparse_depth(&depth, &image, sparse, &mut rng)?.quantized());
        if let Some(gt) = out.gt.as_mut() {
            gt.push(depth.scaled(s).quantized());
        }
        let pose = Pose::new(*cam.pose.rotation(), cam.pose.translation() * s)?;
        out.cameras.push(Camera::new(pose, cam.intrinsics));
        out.images.push(image);
    }
    Ok(out)
}

/// Writes `data` in the dataset layout under `dir`.
pub fn export(dir: &Path, data: &Dataset) -> Result<()> {
    write_cameras(&dir.join("cameras.txt"), &data.cameras)?;
    for i in 0..data.len() {
        let n = view_name(i);
        write_ppm(&dir.join("images").join(format!("{n}.ppm")), &data.images[i])?;
        write_masked_depth(
            &dir.join("sparse").join(format!("{n}.pfm")),
            &dir.join("sparse").join(format!("{n}.pgm")),
            &data.sparse[i],
        )?;
        if let Some(gt) = &data.gt {
            write_masked_depth(
                &dir.join("gt").join(format!("{n}.pfm")),
                &dir.join("gt").join(format!("{n}.pgm")),
                &gt[i],
            )?;
        }
    }
    Ok(())
}

fn ingest_err(e: Error) -> Error {
    match e {
        Error::Ingest(_) => e,
        other => Error::Ingest(other.to_string()),
    }
}

fn depth_pair(dir: &Path, kind: &str, n: &str) -> (PathBuf, PathBuf) {
    (dir.join(kind).join(format!("{n}.pfm")), dir.join(kind).join(format!("{n}.pgm")))
}

fn count_files(dir: &Path, ext: &str) -> usize {
    std::fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .filter(|e| e.path().extension().is_some_and(|x| x == ext))
                .count()
        })
        .unwrap_or(0)
}

/// Reads and validates a dataset directory.
pub fn ingest(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::Ingest(format!("{} is not a directory", dir.display())));
    }
    let cam_path = dir.join("cameras.txt");
    let cameras = read_cameras(&cam_path).map_err(ingest_err)?;
    let n_images = count_files(&dir.join("images"), "ppm");
    if n_images != cameras.len() {
        return Err(Error::Ingest(format!(
            "{} lists {} cameras but {} holds {n_images} images",
            cam_path.display(),
            cameras.len(),
            dir.join("images").display()
        )));
    }
    let has_gt = dir.join("gt").is_dir();
    let mut data = Dataset {
        images: Vec::new(),
        cameras: cameras.clone(),
        sparse: Vec::new(),
        gt: has_gt.then(Vec::new),
    };
    for (i, cam) in cameras.iter().enumerate() {
        let n = view_name(i);
        let img_path = dir.join("images").join(format!("{n}.ppm"));
        let image = read_ppm(&img_path).map_err(ingest_err)?;
        let k = &cam.intrinsics;
        if (image.width, image.height) != (k.width, k.height) {
            return Err(Error::Ingest(format!(
                "{} is {}x{} but camera {i} in {} is {}x{}",
                img_path.display(),
                image.width,
                image.height,
                cam_path.display(),
                k.width,
                k.height
            )));
        }
        let mut kinds = vec!["sparse"];
        if has_gt {
            kinds.push("gt");
        }
        for kind in kinds {
            let (pfm, pgm) = depth_pair(dir, kind, &n);
            let depth = read_masked_depth(&pfm, &pgm).map_err(ingest_err)?;
            if (depth.width, depth.height) != (image.width, image.height) {
                return Err(Error::Ingest(format!(
                    "{} is {}x{} but {} is {}x{}",
                    pfm.display(),
                    depth.width,
                    depth.height,
                    img_path.display(),
                    image.width,
                    image.height
                )));
            }
            match kind {
                "sparse" => data.sparse.push(depth),
                _ => data.gt.as_mut().expect("gt present").push(depth),
            }
        }
        data.images.push(image);
    }
    Ok(data)
}
