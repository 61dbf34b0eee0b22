use std::path::PathBuf;

use crate::device::RegistryEntry;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceDescriptor {
    pub device_name: String,
    pub transport_address: String,
    /// Filled in by probing the device; `None` until then.
    pub latest_rec_id: Option<u16>,
}

pub trait Discovery {
    fn discover(&self) -> std::io::Result<Vec<(String, String)>>;
}

/// Devices advertised as `<name>.json` files in a registry directory.
pub struct RegistryDiscovery {
    pub dir: PathBuf,
}

impl Discovery for RegistryDiscovery {
    fn discover(&self) -> std::io::Result<Vec<(String, String)>> {
        Ok(RegistryEntry::list(&self.dir)?.into_iter().map(|e| (e.name, e.address)).collect())
    }
}

/// Fixed list, for in-process runs.
pub struct StaticDiscovery(pub Vec<(String, String)>);

impl Discovery for StaticDiscovery {
    fn discover(&self) -> std::io::Result<Vec<(String, String)>> {
        Ok(self.0.clone())
    }
}

/// Devices whose name starts with `filter_prefix`. An unreachable discovery
/// source yields an empty list and a warning.
pub fn scan(discovery: &dyn Discovery, filter_prefix: &str) -> Vec<DeviceDescriptor> {
    match discovery.discover() {
        Ok(found) => found
            .into_iter()
            .filter(|(name, _)| name.starts_with(filter_prefix))
            .map(|(device_name, transport_address)| DeviceDescriptor {
                device_name,
                transport_address,
                latest_rec_id: None,
            })
            .collect(),
        Err(e) => {
            tracing::warn!("device discovery unavailable: {e}");
            Vec::new()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[DeviceDescriptor]) -> Vec<&str> {
        v.iter().map(|d| d.device_name.as_str()).collect()
    }

    #[test]
    fn prefix_filter() {
        let d = StaticDiscovery(vec![
            ("TAC-01".into(), "a".into()),
            ("OTHER-01".into(), "b".into()),
            ("TAC-02".into(), "c".into()),
        ]);
        assert_eq!(names(&scan(&d, "TAC")), vec!["TAC-01", "TAC-02"]);
        assert!(scan(&StaticDiscovery(vec![]), "TAC").is_empty());
    }

    #[test]
    fn missing_registry_is_empty_not_error() {
        let d = RegistryDiscovery { dir: "/nonexistent/registry/dir".into() };
        assert!(scan(&d, "TAC").is_empty());
    }
}
