"""Convert pystruct's bundled OCR letters pickle into the tab-separated
letter.data layout read by `dseq --format ocr`.

    python3 scripts/letters_pickle_to_ocr.py letters.pickle data/ocr/letter.data.gz

Columns per line: id, letter, next_id (-1 ends a word), word_id, position,
fold, then the 128 pixel values.
"""
import gzip
import pickle
import sys


def main(src, dst):
    with open(src, "rb") as fh:
        data = pickle.load(fh, encoding="latin1")
    opener = gzip.open if dst.endswith(".gz") else open
    next_id = 1
    with opener(dst, "wt") as out:
        for word_id, (labels, pixels, fold) in enumerate(
            zip(data["labels"], data["data"], data["folds"]), start=1
        ):
            for pos, (label, row) in enumerate(zip(labels, pixels), start=1):
                ident = next_id
                next_id += 1
                nxt = ident + 1 if pos < len(labels) else -1
                fields = [str(ident), chr(ord("a") + int(label)), str(nxt),
                          str(word_id), str(pos), str(int(fold))]
                fields.extend(str(int(p)) for p in row)
                out.write("\t".join(fields) + "\n")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
