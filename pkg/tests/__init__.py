# Tests for feel-csi-feedback
