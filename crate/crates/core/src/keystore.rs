//! On-disk identities: `<name>.key` holds the hex private scalar,
//! `<name>.chain` one hex certificate per line, leaf first.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::session::{verify_chain, DeviceCertificate, Identity, Role};

pub const ROOT_NAME: &str = "root";

#[derive(Debug, Error)]
pub enum KeyStoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("identity {0:?} already exists (use --force to overwrite)")]
    Exists(String),
    #[error("identity {0:?} not found in key store")]
    Missing(String),
    #[error("identity {name:?} is corrupt: {reason}")]
    Corrupt { name: String, reason: String },
    #[error("issuer {0:?} is not a certificate authority")]
    IssuerNotAuthority(String),
    #[error("a root identity is self-signed and takes no issuer")]
    RootWithIssuer,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> KeyStoreError + '_ {
    move |source| KeyStoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone)]
pub struct KeyStore {
    dir: PathBuf,
}

impl KeyStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn key_path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}.key"))
    }

    fn chain_path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}.chain"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.key_path(name).exists() || self.chain_path(name).exists()
    }

    pub fn save(&self, name: &str, identity: &Identity, force: bool) -> Result<(), KeyStoreError> {
        if !force && self.contains(name) {
            return Err(KeyStoreError::Exists(name.to_string()));
        }
        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let chain: String = identity
            .chain()
            .iter()
            .map(|c| hex::encode(c.to_bytes()) + "\n")
            .collect();
        let chain_path = self.chain_path(name);
        fs::write(&chain_path, chain).map_err(io_err(&chain_path))?;
        let key_path = self.key_path(name);
        write_secret(&key_path, format!("{}\n", hex::encode(identity.private_scalar())).as_bytes())
            .map_err(io_err(&key_path))
    }

    pub fn load(&self, name: &str) -> Result<Identity, KeyStoreError> {
        let corrupt = |reason: String| KeyStoreError::Corrupt {
            name: name.to_string(),
            reason,
        };
        let chain = self.load_chain(name)?;
        let key_path = self.key_path(name);
        let text = fs::read_to_string(&key_path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => KeyStoreError::Missing(name.to_string()),
            _ => io_err(&key_path)(e),
        })?;
        let scalar: [u8; 32] = hex::decode(text.trim())
            .map_err(|e| corrupt(e.to_string()))?
            .try_into()
            .map_err(|_| corrupt("private key is not 32 bytes".into()))?;
        Identity::from_private_scalar(&scalar, chain).ok_or_else(|| corrupt("key does not match certificate".into()))
    }

    pub fn load_chain(&self, name: &str) -> Result<Vec<DeviceCertificate>, KeyStoreError> {
        let path = self.chain_path(name);
        let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => KeyStoreError::Missing(name.to_string()),
            _ => io_err(&path)(e),
        })?;
        let chain = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let bytes = hex::decode(l.trim()).map_err(|e| e.to_string())?;
                DeviceCertificate::from_bytes(&bytes).map_err(|e| e.to_string())
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|reason| KeyStoreError::Corrupt {
                name: name.to_string(),
                reason,
            })?;
        if chain.is_empty() {
            return Err(KeyStoreError::Corrupt {
                name: name.to_string(),
                reason: "empty certificate chain".into(),
            });
        }
        Ok(chain)
    }

    /// The root certificate, which is all a verifier needs.
    pub fn trust_root(&self) -> Result<DeviceCertificate, KeyStoreError> {
        let chain = self.load_chain(ROOT_NAME)?;
        Ok(chain.into_iter().last().expect("load_chain rejects empty chains"))
    }

    /// Creates an identity named `name` (default: the role name). Non-root
    /// roles are issued by `issuer` (default: root).
    pub fn provision<R: RngCore + CryptoRng>(
        &self,
        role: Role,
        name: Option<&str>,
        issuer: Option<&str>,
        force: bool,
        rng: &mut R,
    ) -> Result<Identity, KeyStoreError> {
        let name = name.unwrap_or(role.name());
        if !force && self.contains(name) {
            return Err(KeyStoreError::Exists(name.to_string()));
        }
        let identity = if role == Role::ManufacturerRoot {
            if issuer.is_some() {
                return Err(KeyStoreError::RootWithIssuer);
            }
            Identity::new_root(rng)
        } else {
            let issuer_name = issuer.unwrap_or(ROOT_NAME);
            let authority = self.load(issuer_name)?;
            if !authority.certificate().role.is_authority() {
                return Err(KeyStoreError::IssuerNotAuthority(issuer_name.to_string()));
            }
            let issued = authority.issue(role, rng);
            verify_chain(issued.chain(), authority.root_certificate()).map_err(|e| KeyStoreError::Corrupt {
                name: issuer_name.to_string(),
                reason: e.to_string(),
            })?;
            issued
        };
        self.save(name, &identity, force)?;
        Ok(identity)
    }
}

#[cfg(unix)]
fn write_secret(path: &Path, contents: &[u8]) -> io::Result<()> {
    use std::os::unix::fs::OpenOptionsExt;
    let mut file = fs::OpenOptions::new()
        .write(true)
        .create(true)
        .truncate(true)
        .mode(0o600)
        .open(path)?;
    file.write_all(contents)
}

#[cfg(not(unix))]
fn write_secret(path: &Path, contents: &[u8]) -> io::Result<()> {
    fs::File::create(path)?.write_all(contents)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn root_then_sensor_verifies() {
        let dir = tempfile::tempdir().unwrap();
        let store = KeyStore::new(dir.path());
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        store.provision(Role::ManufacturerRoot, None, None, false, &mut rng).unwrap();
        let sensor = store.provision(Role::Sensor, None, None, false, &mut rng).unwrap();
        let root = store.trust_root().unwrap();
        verify_chain(sensor.chain(), &root).unwrap();
        let loaded = store.load("sensor").unwrap();
        assert_eq!(loaded.chain(), sensor.chain());
        assert_eq!(loaded.private_scalar(), sensor.private_scalar());
    }

    #[test]
    fn sensor_without_root_fails() {
        let dir = tempfile::tempdir().unwrap();
        let store = KeyStore::new(dir.path());
        let err = store
            .provision(Role::Sensor, None, None, false, &mut ChaCha20Rng::seed_from_u64(1))
            .unwrap_err();
        assert!(matches!(err, KeyStoreError::Missing(n) if n == "root"));
        assert!(!store.contains("sensor"));
    }

    #[test]
    fn refuses_overwrite_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let store = KeyStore::new(dir.path());
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let first = store.provision(Role::ManufacturerRoot, None, None, false, &mut rng).unwrap();
        assert!(matches!(
            store.provision(Role::ManufacturerRoot, None, None, false, &mut rng),
            Err(KeyStoreError::Exists(_))
        ));
        assert_eq!(store.load("root").unwrap().private_scalar(), first.private_scalar());
        let second = store.provision(Role::ManufacturerRoot, None, None, true, &mut rng).unwrap();
        assert_ne!(second.private_scalar(), first.private_scalar());
    }

    #[test]
    fn two_sensors_distinct_and_valid() {
        let dir = tempfile::tempdir().unwrap();
        let store = KeyStore::new(dir.path());
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        store.provision(Role::ManufacturerRoot, None, None, false, &mut rng).unwrap();
        let a = store.provision(Role::Sensor, Some("cam-a"), None, false, &mut rng).unwrap();
        let b = store.provision(Role::Sensor, Some("cam-b"), None, false, &mut rng).unwrap();
        assert_ne!(a.certificate().subject_id, b.certificate().subject_id);
        let root = store.trust_root().unwrap();
        for name in ["cam-a", "cam-b"] {
            verify_chain(store.load(name).unwrap().chain(), &root).unwrap();
        }
    }

    #[test]
    fn device_class_intermediate_and_non_authority_issuer() {
        let dir = tempfile::tempdir().unwrap();
        let store = KeyStore::new(dir.path());
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        store.provision(Role::ManufacturerRoot, None, None, false, &mut rng).unwrap();
        store.provision(Role::DeviceClass, None, None, false, &mut rng).unwrap();
        let sensor = store
            .provision(Role::Sensor, None, Some("device-class"), false, &mut rng)
            .unwrap();
        assert_eq!(sensor.chain().len(), 3);
        verify_chain(sensor.chain(), &store.trust_root().unwrap()).unwrap();
        assert!(matches!(
            store.provision(Role::Host, None, Some("sensor"), false, &mut rng),
            Err(KeyStoreError::IssuerNotAuthority(_))
        ));
    }

    #[cfg(unix)]
    #[test]
    fn key_file_is_owner_only() {
        use std::os::unix::fs::PermissionsExt;
        let dir = tempfile::tempdir().unwrap();
        let store = KeyStore::new(dir.path());
        store
            .provision(Role::ManufacturerRoot, None, None, false, &mut ChaCha20Rng::seed_from_u64(5))
            .unwrap();
        let mode = fs::metadata(dir.path().join("root.key")).unwrap().permissions().mode();
        assert_eq!(mode & 0o777, 0o600);
    }

    #[test]
    fn mismatched_key_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let store = KeyStore::new(dir.path());
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        store.provision(Role::ManufacturerRoot, None, None, false, &mut rng).unwrap();
        store.provision(Role::Host, None, None, false, &mut rng).unwrap();
        fs::copy(dir.path().join("root.key"), dir.path().join("host.key")).unwrap();
        assert!(matches!(store.load("host"), Err(KeyStoreError::Corrupt { .. })));
    }
}
