//! CityGML appearance parsing: finds facade texture files referenced by
//! `ParameterizedTexture` nodes and emits a texture manifest.
//!
//! Geometry, CRS and `GeoreferencedTexture` nodes are ignored.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::texture::TextureImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureManifestEntry {
    pub texture_path: String,
    pub surface_id: String,
    #[serde(default)]
    pub tex_coords: Vec<(f64, f64)>,
    #[serde(default)]
    pub image_width: u32,
    #[serde(default)]
    pub image_height: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedManifest {
    pub entries: Vec<TextureManifestEntry>,
    /// Texture references without an `imageURI`.
    pub skipped_missing_uri: usize,
    /// Targets whose coordinate list was odd-length, non-finite or shorter
    /// than three pairs.
    pub skipped_bad_coords: usize,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedTextures {
    pub images: Vec<TextureImage>,
    /// Manifest paths that could not be opened or decoded.
    pub unresolved: Vec<String>,
}

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, name: &str) -> Option<roxmltree::Node<'a, 'i>> {
    node.children().find(|c| c.is_element() && c.tag_name().name() == name)
}

fn parse_coords(text: &str) -> Option<Vec<(f64, f64)>> {
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .ok()?;
    if !values.len().is_multiple_of(2) || values.len() < 6 || values.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(values.chunks_exact(2).map(|p| (p[0], p[1])).collect())
}

fn end_position(text: &str) -> (u32, u32) {
    let line = text.matches('\n').count() as u32 + 1;
    let last = text.rsplit('\n').next().unwrap_or("");
    (line, last.chars().count() as u32 + 1)
}

/// Parses a CityGML document into manifest entries, one per
/// (texture, target surface) pair, in document order.
pub fn parse_citygml(document: &str) -> Result<ParsedManifest> {
    let doc = roxmltree::Document::parse(document).map_err(|e| {
        let (line, column) = match e {
            // reported at 1:1; point at the end of input instead
            roxmltree::Error::UnexpectedEndOfStream => end_position(document),
            _ => (e.pos().row, e.pos().col),
        };
        Error::Xml {
            line,
            column,
            message: e.to_string(),
        }
    })?;

    let mut out = ParsedManifest::default();
    for tex in doc
        .descendants()
        .filter(|n| n.is_element() && n.tag_name().name() == "ParameterizedTexture")
    {
        let uri = child(tex, "imageURI")
            .and_then(|n| n.text())
            .map(str::trim)
            .unwrap_or("");
        let targets: Vec<_> = tex
            .children()
            .filter(|c| c.is_element() && c.tag_name().name() == "target")
            .collect();
        let refs = targets.len().max(1);
        if uri.is_empty() {
            out.skipped_missing_uri += refs;
            continue;
        }

        if targets.is_empty() {
            out.entries.push(TextureManifestEntry {
                texture_path: uri.to_string(),
                surface_id: String::new(),
                tex_coords: Vec::new(),
                image_width: 0,
                image_height: 0,
            });
            continue;
        }

        for target in targets {
            let surface_id = target
                .attribute("uri")
                .map(|u| u.trim_start_matches('#').to_string())
                .unwrap_or_default();
            // First ring only; interior rings share the texture.
            let coords_text = target
                .descendants()
                .find(|n| n.is_element() && n.tag_name().name() == "textureCoordinates")
                .and_then(|n| n.text());
            let tex_coords = match coords_text {
                Some(t) => match parse_coords(t) {
                    Some(c) => c,
                    None => {
                        out.skipped_bad_coords += 1;
                        continue;
                    }
                },
                None => Vec::new(),
            };
            out.entries.push(TextureManifestEntry {
                texture_path: uri.to_string(),
                surface_id,
                tex_coords,
                image_width: 0,
                image_height: 0,
            });
        }
    }
    Ok(out)
}

pub fn manifest_to_json(entries: &[TextureManifestEntry]) -> Result<String> {
    Ok(serde_json::to_string_pretty(entries)?)
}

pub fn manifest_from_json(text: &str) -> Result<Vec<TextureManifestEntry>> {
    let entries: Vec<TextureManifestEntry> = serde_json::from_str(text)?;
    for e in &entries {
        if e.texture_path.is_empty() {
            return Err(Error::invalid("manifest entry with empty texture_path"));
        }
        if !e.tex_coords.is_empty() && e.tex_coords.len() < 3 {
            return Err(Error::invalid(format!(
                "{}: fewer than 3 texture coordinates",
                e.texture_path
            )));
        }
    }
    Ok(entries)
}

/// Loads the manifest's texture files relative to `root`, back-filling
/// `image_width`/`image_height` for every entry that resolves.
pub fn load_textures(manifest: &mut [TextureManifestEntry], root: &Path) -> Result<LoadedTextures> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "texture root is not a directory"),
        ));
    }
    let mut out = LoadedTextures::default();
    for entry in manifest.iter_mut() {
        let path = root.join(&entry.texture_path);
        match TextureImage::load(&path, entry.texture_path.clone()) {
            Ok(img) => {
                entry.image_width = img.width;
                entry.image_height = img.height;
                out.images.push(img);
            }
            Err(_) => {
                entry.image_width = 0;
                entry.image_height = 0;
                out.unresolved.push(entry.texture_path.clone());
            }
        }
    }
    Ok(out)
}
