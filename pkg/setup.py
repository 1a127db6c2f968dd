from setuptools import setup

README_FILE = "README.md"
REQUIREMENTS_FILE = "requirements.txt"


setup(
    name="subject_inpaint",
    packages=["backbones", "clients", "embedders", "enums", "utils"],
    py_modules=[
        "adm",
        "bench",
        "config",
        "dif",
        "errors",
        "evaluation",
        "runs",
        "subject_inpaint",
        "tas",
        "training",
    ],
    version=1.0,
    description="Subject-driven inpainting with attribute substitution and two-stage sampling",
    long_description=open(README_FILE).read(),
    install_requires=open(REQUIREMENTS_FILE).read().splitlines(),
    extras_require={"pretrained": ["diffusers==0.27.2", "transformers==4.40.2"]},
    entry_points={"console_scripts": ["subject-inpaint=subject_inpaint:main"]},
    include_package_data=True,
)
