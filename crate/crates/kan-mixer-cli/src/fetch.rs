//! Dataset fetch helper: downloads the published archives, verifies their
//! MD5 checksums against the values published with each dataset, and unpacks
//! them into the data directory.

use crate::config::DatasetKind;
use crate::CliError;
use md5::{Digest, Md5};
use std::fs;
use std::io::Read;
use std::path::Path;

const MNIST_BASE: &str = "https://ossci-datasets.s3.amazonaws.com/mnist";
const CIFAR_BASE: &str = "https://www.cs.toronto.edu/~kriz";

/// (gz file name, md5, unpacked idx name)
const MNIST_FILES: [(&str, &str, &str); 4] = [
    (
        "train-images-idx3-ubyte.gz",
        "f68b3c2dcbeaaa9fbdd348bbdeb94873",
        "train-images-idx3-ubyte",
    ),
    (
        "train-labels-idx1-ubyte.gz",
        "d53e105ee54ea40749a09fcbcd1e9432",
        "train-labels-idx1-ubyte",
    ),
    (
        "t10k-images-idx3-ubyte.gz",
        "9fb629c4189551a2d022fa330f9573f3",
        "t10k-images-idx3-ubyte",
    ),
    (
        "t10k-labels-idx1-ubyte.gz",
        "ec29112dd5afa0611ce80d1b7f02629c",
        "t10k-labels-idx1-ubyte",
    ),
];

const CIFAR10_TAR: (&str, &str) = ("cifar-10-binary.tar.gz", "c32a1d4ab5d03f1284b67883e8d87530");
const CIFAR100_TAR: (&str, &str) = ("cifar-100-binary.tar.gz", "03b5dce01913d631647c71ecec9e9cb8");

fn download(url: &str) -> Result<Vec<u8>, CliError> {
    println!("fetching {url}");
    let response = reqwest::blocking::get(url)
        .map_err(|e| CliError::Data(format!("downloading {url}: {e}")))?;
    if !response.status().is_success() {
        return Err(CliError::Data(format!(
            "downloading {url}: HTTP {}",
            response.status()
        )));
    }
    let mut bytes = Vec::new();
    let mut reader = response;
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| CliError::Data(format!("downloading {url}: {e}")))?;
    Ok(bytes)
}

fn verify_md5(bytes: &[u8], expected: &str, what: &str) -> Result<(), CliError> {
    let digest = Md5::digest(bytes);
    let got = digest.iter().map(|b| format!("{b:02x}")).collect::<String>();
    if got != expected {
        return Err(CliError::Data(format!(
            "{what}: checksum {got} does not match published {expected}"
        )));
    }
    Ok(())
}

fn gunzip(bytes: &[u8]) -> Result<Vec<u8>, CliError> {
    let mut out = Vec::new();
    flate2::read::GzDecoder::new(bytes)
        .read_to_end(&mut out)
        .map_err(|e| CliError::Data(format!("decompressing: {e}")))?;
    Ok(out)
}

fn fetch_mnist(data_dir: &Path, mirror: Option<&str>) -> Result<(), CliError> {
    let base = mirror.unwrap_or(MNIST_BASE);
    for (gz_name, md5, idx_name) in MNIST_FILES {
        let target = data_dir.join(idx_name);
        if target.exists() {
            println!("{} already present", target.display());
            continue;
        }
        let bytes = download(&format!("{base}/{gz_name}"))?;
        verify_md5(&bytes, md5, gz_name)?;
        fs::write(&target, gunzip(&bytes)?)
            .map_err(|e| CliError::Data(format!("writing {}: {e}", target.display())))?;
        println!("wrote {}", target.display());
    }
    Ok(())
}

fn fetch_cifar_tar(
    data_dir: &Path,
    mirror: Option<&str>,
    (tar_name, md5): (&str, &str),
    expected: &[&str],
) -> Result<(), CliError> {
    if expected.iter().all(|rel| data_dir.join(rel).exists()) {
        println!("{tar_name} contents already present under {}", data_dir.display());
        return Ok(());
    }
    let base = mirror.unwrap_or(CIFAR_BASE);
    let bytes = download(&format!("{base}/{tar_name}"))?;
    verify_md5(&bytes, md5, tar_name)?;
    let tar_bytes = gunzip(&bytes)?;
    tar::Archive::new(tar_bytes.as_slice())
        .unpack(data_dir)
        .map_err(|e| CliError::Data(format!("unpacking {tar_name}: {e}")))?;
    for rel in expected {
        if !data_dir.join(rel).exists() {
            return Err(CliError::Data(format!(
                "{tar_name} did not contain expected file {rel}"
            )));
        }
    }
    println!("unpacked {tar_name} into {}", data_dir.display());
    Ok(())
}

pub fn cmd_fetch(
    dataset: Option<DatasetKind>,
    data_dir: &Path,
    mirror: Option<&str>,
) -> Result<(), CliError> {
    fs::create_dir_all(data_dir)
        .map_err(|e| CliError::Data(format!("creating {}: {e}", data_dir.display())))?;
    let all = dataset.is_none();
    if all || dataset == Some(DatasetKind::Mnist) {
        fetch_mnist(data_dir, mirror)?;
    }
    if all || dataset == Some(DatasetKind::Cifar10) {
        let expected: Vec<String> = (1..=5)
            .map(|i| format!("cifar-10-batches-bin/data_batch_{i}.bin"))
            .chain(["cifar-10-batches-bin/test_batch.bin".to_string()])
            .collect();
        let expected: Vec<&str> = expected.iter().map(String::as_str).collect();
        fetch_cifar_tar(data_dir, mirror, CIFAR10_TAR, &expected)?;
    }
    if all || dataset == Some(DatasetKind::Cifar100) {
        fetch_cifar_tar(
            data_dir,
            mirror,
            CIFAR100_TAR,
            &["cifar-100-binary/train.bin", "cifar-100-binary/test.bin"],
        )?;
    }
    Ok(())
}
