use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ProvisionError;

pub const BUILTIN_CATALOG: &str = include_str!("../../../../images/catalog.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoleTag {
    /// gNB + near-RT-RIC + xApp host, for base-station nodes.
    GnbRic,
    /// UE-side NR stack.
    Nrue,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageDescriptor {
    pub name: String,
    /// Hex SHA-256 of the image content.
    pub digest: String,
    pub role_tag: RoleTag,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CatalogEntry {
    name: String,
    role_tag: RoleTag,
    digest: String,
    content: String,
}

#[derive(Debug, Deserialize)]
struct CatalogDoc {
    #[serde(default)]
    images: Vec<CatalogEntry>,
}

pub fn sha256_hex(content: &[u8]) -> String {
    hex::encode(Sha256::digest(content))
}

/// Pre-built and user-registered images. Both kinds resolve the same way.
#[derive(Debug, Clone, Default)]
pub struct ImageCatalog {
    entries: BTreeMap<String, CatalogEntry>,
}

impl ImageCatalog {
    pub fn load(text: &str) -> Result<ImageCatalog, ProvisionError> {
        let doc: CatalogDoc = toml::from_str(text).map_err(|e| ProvisionError::Catalog(e.to_string()))?;
        let mut cat = ImageCatalog::default();
        for entry in doc.images {
            if sha256_hex(entry.content.as_bytes()) != entry.digest {
                return Err(ProvisionError::DigestMismatch(entry.name));
            }
            if cat.entries.contains_key(&entry.name) {
                return Err(ProvisionError::Catalog(format!("duplicate image name {}", entry.name)));
            }
            cat.entries.insert(entry.name.clone(), entry);
        }
        Ok(cat)
    }

    pub fn builtin() -> ImageCatalog {
        ImageCatalog::load(BUILTIN_CATALOG).expect("bundled catalog is valid")
    }

    pub fn resolve(&self, name: &str) -> Result<ImageDescriptor, ProvisionError> {
        self.entries
            .get(name)
            .map(|e| ImageDescriptor { name: e.name.clone(), digest: e.digest.clone(), role_tag: e.role_tag })
            .ok_or_else(|| ProvisionError::UnknownImage(name.to_string()))
    }

    pub fn list(&self) -> Vec<ImageDescriptor> {
        self.entries.keys().map(|n| self.resolve(n).unwrap()).collect()
    }

    /// Add a user image; its digest is computed from `content`.
    pub fn register(&mut self, name: &str, content: &str, role_tag: RoleTag) -> Result<ImageDescriptor, ProvisionError> {
        if name.is_empty() {
            return Err(ProvisionError::Catalog("image name is empty".into()));
        }
        if self.entries.contains_key(name) {
            return Err(ProvisionError::Catalog(format!("duplicate image name {name}")));
        }
        let entry = CatalogEntry {
            name: name.to_string(),
            role_tag,
            digest: sha256_hex(content.as_bytes()),
            content: content.to_string(),
        };
        self.entries.insert(name.to_string(), entry);
        self.resolve(name)
    }

    /// Re-hash the stored content and compare with `image.digest`.
    pub fn verify(&self, image: &ImageDescriptor) -> Result<(), ProvisionError> {
        let entry = self.entries.get(&image.name).ok_or_else(|| ProvisionError::UnknownImage(image.name.clone()))?;
        if sha256_hex(entry.content.as_bytes()) != image.digest || entry.digest != image.digest {
            return Err(ProvisionError::DigestMismatch(image.name.clone()));
        }
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn tamper(&mut self, name: &str) {
        if let Some(e) = self.entries.get_mut(name) {
            e.content.push_str("# injected\n");
        }
    }
}
