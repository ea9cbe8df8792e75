//! Encodes attribute vectors into global and per-token embeddings.

use anyhow::Result;
use attrgan::attr_encoder::{tokenize_attributes, AttrEncoder};
use attrgan::corpus::ShapeSpec;
use attrgan::rng::{stream, Purpose};

fn main() -> Result<()> {
    let spec = ShapeSpec::default();
    let names = spec.attribute_names();
    let encoder = AttrEncoder::new(spec.num_attributes, &mut stream(0, Purpose::Init, 0));

    for class_id in [0, 3, 7] {
        let attrs = spec.attributes_of(&spec.class_factors(class_id));
        let ids = tokenize_attributes(&attrs)?;
        let emb = encoder.encode_attributes(&ids)?;
        let words: Vec<&str> = ids.iter().map(|&i| names[i].as_str()).collect();
        let norm = emb.global_vec.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        println!(
            "class {class_id}: tokens {words:?}, global [{}] |g| = {norm:.4}, local {:?}",
            emb.global_vec.len(),
            emb.local_mat.shape()
        );
    }

    // The recurrent encoder reads tokens in order: a prefix gets the same
    // leading local rows as the full sequence.
    let full = encoder.encode_attributes(&[1, 5, 12])?;
    let prefix = encoder.encode_attributes(&[1, 5])?;
    let d = encoder.dim();
    let same = full.local_mat.data()[..2 * d] == prefix.local_mat.data()[..];
    println!("prefix rows identical: {same}");

    match tokenize_attributes(&vec![0; spec.num_attributes]) {
        Err(e) => println!("all-zero vector: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
