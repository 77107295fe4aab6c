//! Writes and reads back an array container with its JSON header.
use sosfwi::harness::ArrayContainer;

fn main() {
    let dir = std::env::temp_dir().join("usfwi_container_example");
    let values: Vec<f64> = (0..12).map(|n| 1540.0 + n as f64).collect();
    let c = ArrayContainer::real(&[3, 4], &["lateral", "depth"], "m/s", values).meta("note", "example");
    let header = c.write(&dir, "map", None).unwrap();
    println!("{}", std::fs::read_to_string(&header).unwrap());
    assert_eq!(ArrayContainer::read(&header).unwrap(), c);
    println!("round trip ok");
}
