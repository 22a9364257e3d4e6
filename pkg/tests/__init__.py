# Tests for the multi-organ segmentation engine
