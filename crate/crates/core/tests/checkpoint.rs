use confill::checkpoint::{Container, MAGIC, VERSION};
use confill::networks::{Discriminator, DiscriminatorConfig, GeneratorConfig, InpaintNet};
use confill::tensor::Tensor;
use proptest::prelude::*;

fn header(meta: &str, count: u32) -> Vec<u8> {
    let mut b = MAGIC.to_vec();
    b.extend_from_slice(&VERSION.to_le_bytes());
    b.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    b.extend_from_slice(meta.as_bytes());
    b.extend_from_slice(&count.to_le_bytes());
    b
}

fn entry(name: &str, dims: &[u32], data: &[f64]) -> Vec<u8> {
    let mut b = (name.len() as u16).to_le_bytes().to_vec();
    b.extend_from_slice(name.as_bytes());
    b.push(dims.len() as u8);
    for d in dims {
        b.extend_from_slice(&d.to_le_bytes());
    }
    for v in data {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b
}

#[test]
fn hand_encoded_bytes_decode() {
    let mut bytes = header("{}", 2);
    bytes.extend(entry("a", &[2, 1], &[1.5, -2.0]));
    bytes.extend(entry("b", &[0], &[]));
    let c = Container::decode(&bytes).unwrap();
    assert_eq!(c.meta, "{}");
    assert_eq!(c.get("a").unwrap().data(), &[1.5, -2.0]);
    assert_eq!(c.get("a").unwrap().shape(), &[2, 1]);
    assert_eq!(c.encode().unwrap(), bytes);
}

#[test]
fn duplicate_names_are_rejected() {
    let mut bytes = header("", 2);
    bytes.extend(entry("a", &[1], &[1.0]));
    bytes.extend(entry("a", &[1], &[2.0]));
    assert!(Container::decode(&bytes).is_err());
}

#[test]
fn oversized_dims_are_rejected_without_allocating() {
    let mut bytes = header("", 1);
    bytes.extend(entry("a", &[u32::MAX, u32::MAX, u32::MAX], &[]));
    assert!(Container::decode(&bytes).is_err());
    let mut bytes = header("", 1);
    bytes.extend(entry("a", &[1; 9], &[0.0]));
    assert!(Container::decode(&bytes).is_err());
}

#[test]
fn bad_version_and_meta_are_rejected() {
    let mut bytes = header("{}", 0);
    bytes[8] = 2;
    assert!(Container::decode(&bytes).is_err());
    let mut bytes = header("ab", 0);
    bytes[16] = 0xff;
    assert!(Container::decode(&bytes).is_err());
}

#[test]
fn network_parameters_round_trip_through_a_file() {
    let net = InpaintNet::new(GeneratorConfig { base_channels: 4, input_resolution: 16, depth: 2, seed: 3 }).unwrap();
    let mut d = Discriminator::new(DiscriminatorConfig { base_channels: 4, stages: 2, seed: 4 }).unwrap();
    d.power_iterate();
    let mut c = Container::new("{\"k\":1}");
    net.params().export("gen", &mut c);
    d.export("disc", &mut c);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ckpt");
    c.save(&path).unwrap();
    let back = Container::load(&path).unwrap();
    assert_eq!(back.encode().unwrap(), c.encode().unwrap());

    let mut other = InpaintNet::new(GeneratorConfig { base_channels: 4, input_resolution: 16, depth: 2, seed: 99 }).unwrap();
    assert_ne!(other.params().digest(), net.params().digest());
    other.params_mut().import("gen", &back).unwrap();
    assert_eq!(other.params().digest(), net.params().digest());

    let mut d2 = Discriminator::new(DiscriminatorConfig { base_channels: 4, stages: 2, seed: 5 }).unwrap();
    d2.import("disc", &back).unwrap();
    assert_eq!(d2.spectral()[0].u, d.spectral()[0].u);
    assert_eq!(d2.params().digest(), d.params().digest());
}

#[test]
fn import_rejects_missing_or_misshapen_tensors() {
    let net = InpaintNet::new(GeneratorConfig { base_channels: 4, input_resolution: 16, depth: 2, seed: 3 }).unwrap();
    let mut c = Container::new("");
    net.params().export("gen", &mut c);
    let mut wrong = InpaintNet::new(GeneratorConfig { base_channels: 8, input_resolution: 16, depth: 2, seed: 3 }).unwrap();
    assert!(wrong.params_mut().import("gen", &c).is_err());
    let mut same = net.clone();
    assert!(same.params_mut().import("other", &c).is_err());
}

fn tensor_strategy() -> impl Strategy<Value = Tensor> {
    prop::collection::vec(0usize..4, 0..4).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        prop::collection::vec(any::<f64>(), n).prop_map(move |data| Tensor::new(&shape, data).unwrap())
    })
}

proptest! {
    #[test]
    fn containers_round_trip_byte_exactly(
        meta in ".{0,40}",
        tensors in prop::collection::vec(tensor_strategy(), 0..5),
    ) {
        let mut c = Container::new(meta);
        for (i, t) in tensors.into_iter().enumerate() {
            c.push(format!("t{i}"), t);
        }
        let bytes = c.encode().unwrap();
        let back = Container::decode(&bytes).unwrap();
        prop_assert_eq!(back.encode().unwrap(), bytes);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = Container::decode(&bytes);
        let mut prefixed = header("", 1);
        prefixed.extend_from_slice(&bytes);
        let _ = Container::decode(&prefixed);
    }
}
