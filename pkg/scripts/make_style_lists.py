"""Regenerate the bundled style lists.

The training list combines person, fictional-character and makeup
vocabularies into 500 distinct appearance descriptions. The held-out list
is a fixed set of 25 art styles that share no line with the training list.
"""

import argparse
from pathlib import Path

import numpy as np

DATA = Path(__file__).resolve().parents[1] / "src" / "metastyle" / "harness" / "data"

PEOPLE = ["young woman", "elderly man", "teenage boy", "middle-aged woman", "grandmother",
          "young man", "little girl", "retired sailor", "farmer", "office worker"]
PERSON_TRAITS = [
    "dark curly hair and a faint scar above the left eyebrow", "freckles and bright red hair",
    "a thick grey beard and deep smile lines", "short bleached hair and a septum ring",
    "warm brown skin and braided hair", "pale skin and light blond eyebrows",
    "patches of vitiligo across the cheeks", "round glasses and a neat moustache",
    "a shaved head and a tattoo on the neck", "sun-tanned skin and windswept hair",
    "a birthmark on the chin and green eyes", "long black hair and a lip stud",
    "rosy cheeks and a gap-toothed grin", "silver hair tied in a bun",
    "a bushy hipster beard", "dimples and hazel eyes",
]
PERSON_MOODS = ["looking confident", "with a calm expression", "with a cheerful look",
                "with a tired gaze", "smiling warmly"]

CHARACTERS = ["woodland elf", "wicked witch", "cyborg", "haunted doll", "fairy tale princess",
              "vampire count", "forest troll", "sea nymph", "goblin merchant", "ice queen",
              "desert nomad spirit", "clockwork knight", "ghostly pirate", "moon fairy",
              "orc warlord", "dragon priestess"]
CHARACTER_TRAITS = [
    "green skin and a crooked nose", "metallic features and glowing eyes",
    "cracked porcelain skin", "pointed ears and soft features", "a button nose and warm brown eyes",
    "heart-shaped lips and a painted cheek", "frosty blue skin and white lashes",
    "scales along the jaw", "tusks and a heavy brow", "silver freckles and violet eyes",
    "bark-like skin and mossy hair", "a pale face and sharp fangs",
]

MAKEUP = ["mystical unicorn", "otherworldly alien", "dark sorceress", "steampunk robot",
          "colorful peacock", "circus clown", "tribal warrior", "neon raver",
          "masquerade dancer", "tiger", "zombie bride", "butterfly"]
MAKEUP_TRAITS = [
    "pastel rainbow hair and glitter", "silver body paint and a metallic lip",
    "black lipstick and smoky purple eyeshadow", "bronze makeup and brass goggles",
    "blue and green feathers and bold eyeshadow", "white face paint and a red nose",
    "orange and black stripes", "fluorescent face paint", "a jeweled eye mask",
    "gold leaf on the cheekbones", "grey skin and dark circles", "winged eyeliner and gems",
]

TEST_STYLES = [
    "Impressionist portrait painting", "Black and white pen and ink portrait drawing",
    "Lino portrait print", "Realistic line art portrait drawing", "Medieval portrait painting",
    "Bronze statue", "3D render", "Vintage anime chibi character", "Graffiti portrait",
    "Degas chalk portrait painting", "Pointillism portrait drawing", "Character design by Herge",
    "Cartoon", "Oil painting", "Pencil portrait drawing", "Gouache portrait painting",
    "Acrylic portrait painting", "Watercolor painting", "Pop art poster",
    "Fauvism portrait painting", "Mosaic", "Caricature", "8-bit pixel art",
    "Miro portrait painting", "Abstract white cubist sculpture",
]


def article(word):
    return "An" if word[0] in "aeiou" else "A"


def candidates():
    out = []
    for who in PEOPLE:
        for trait in PERSON_TRAITS:
            for mood in PERSON_MOODS:
                out.append(f"{article(who)} {who} with {trait}, {mood}.")
    for who in CHARACTERS:
        for trait in CHARACTER_TRAITS:
            out.append(f"{who.capitalize()} with {trait}.")
    for who in MAKEUP:
        for trait in MAKEUP_TRAITS:
            out.append(f"{article(who)} {who} look with {trait}.")
    return out


def train_styles(n=500, seed=0):
    pools = {"person": [], "character": [], "makeup": []}
    for line in candidates():
        key = "person" if line.endswith((".",)) and "," in line else (
            "makeup" if " look with " in line else "character")
        pools[key].append(line)
    rng = np.random.default_rng(seed)
    quota = {"person": n - 2 * (n // 3), "character": n // 3, "makeup": n // 3}
    chosen = []
    for key in ("person", "character", "makeup"):
        pool = pools[key]
        idx = rng.choice(len(pool), size=min(quota[key], len(pool)), replace=False)
        chosen += [pool[i] for i in sorted(idx)]
    if len(chosen) < n:
        rest = sorted(set(candidates()) - set(chosen))
        idx = rng.choice(len(rest), size=n - len(chosen), replace=False)
        chosen += [rest[i] for i in sorted(idx)]
    return chosen


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=DATA)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    train = train_styles(seed=args.seed)
    assert len(set(train)) == 500 and not set(train) & set(TEST_STYLES)
    (args.out / "train_styles.txt").write_text(
        "# appearance descriptions used for meta-training\n" + "\n".join(train) + "\n", encoding="utf-8")
    (args.out / "test_styles.txt").write_text(
        "# held-out art styles, never seen in meta-training\n" + "\n".join(TEST_STYLES) + "\n",
        encoding="utf-8")
    print(f"wrote {len(train)} train and {len(TEST_STYLES)} test styles to {args.out}")


if __name__ == "__main__":
    main()
